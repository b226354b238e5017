//! Cell-level and graph-level comparison of a predicted DSM against ground truth,
//! plus mean/std aggregation over repetitions.
//!
//! Conventions:
//! - every cell, diagonal included, is counted;
//! - predicted unsure cells (`2`) are excluded from the confusion counts;
//! - for edit distance an unsure cell costs 1 against anything else;
//! - for spectra an unsure cell is read as `0`;
//! - matrices of different size are zero-padded (grids top-left, spectra with zeros).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsm::{Dsm, Grid};

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("dimension mismatch: truth {truth}, prediction {pred}")]
    DimensionMismatch { truth: usize, pred: usize },
    #[error("ground truth contains unsure cells")]
    GroundTruthContainsUnsure,
    #[error("eigensolver did not converge on a {0}x{0} matrix")]
    EigensolverNoConvergence(usize),
    #[error("cannot aggregate an empty list")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Cells dropped because the prediction was unsure.
    pub excluded: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_ + self.excluded
    }
}

/// `None` marks a metric whose denominator was zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDistances {
    pub edit: f64,
    pub spectral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub k: usize,
}

/// Confusion counts over all `n²` cells. Labels must already be aligned.
pub fn confusion(truth: &Dsm, pred: &Dsm) -> Result<ConfusionCounts, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::DimensionMismatch { truth: truth.len(), pred: pred.len() });
    }
    confusion_grids(truth.cells(), pred.cells())
}

/// Confusion counts after zero-padding both grids to the larger dimension.
/// Used for unaligned predictions whose size differs from the truth.
pub fn confusion_padded(truth: &Dsm, pred: &Dsm) -> Result<ConfusionCounts, MetricsError> {
    let n = truth.len().max(pred.len());
    confusion_grids(&pad(truth.cells(), n), &pad(pred.cells(), n))
}

fn confusion_grids(truth: &Grid, pred: &Grid) -> Result<ConfusionCounts, MetricsError> {
    if truth.iter().flatten().any(|&c| c == 2) {
        return Err(MetricsError::GroundTruthContainsUnsure);
    }
    let mut c = ConfusionCounts::default();
    for (trow, prow) in truth.iter().zip(pred) {
        for (&t, &p) in trow.iter().zip(prow) {
            match (t, p) {
                (_, 2) => c.excluded += 1,
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (0, 1) => c.fp += 1,
                _ => c.fn_ += 1,
            }
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn cell_metrics(c: &ConfusionCounts) -> CellMetrics {
    let accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    CellMetrics { accuracy, precision, recall, f1 }
}

fn pad(g: &Grid, n: usize) -> Grid {
    (0..n)
        .map(|i| (0..n).map(|j| g.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0)).collect())
        .collect()
}

/// Element-wise L1 disagreement: 0 when cells are equal, 1 otherwise.
pub fn edit_distance(a: &Dsm, b: &Dsm) -> f64 {
    let n = a.len().max(b.len());
    let (pa, pb) = (pad(a.cells(), n), pad(b.cells(), n));
    pa.iter()
        .flatten()
        .zip(pb.iter().flatten())
        .filter(|(x, y)| x != y)
        .count() as f64
}

/// Eigenvalues of a DSM grid with unsure cells read as 0, sorted by (re, im).
///
/// Symmetric grids go through the symmetric eigensolver. Other grids are solved
/// from their exact integer characteristic polynomial, which does not change
/// under relabeling, so permuted copies get bit-identical spectra even when
/// eigenvalues are defective. Integer roots are split off exactly first.
pub fn spectrum(dsm: &Dsm) -> Result<Vec<Complex64>, MetricsError> {
    let n = dsm.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let ints: Vec<Vec<i128>> = dsm.cells().iter().map(|r| r.iter().map(|&c| i128::from(c == 1)).collect()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| ints[i][j] as f64);
    let mut eig: Vec<Complex64> = if m == m.transpose() {
        nalgebra::SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER)
            .ok_or(MetricsError::EigensolverNoConvergence(n))?
            .eigenvalues
            .iter()
            .map(|&re| Complex64::new(re, 0.0))
            .collect()
    } else {
        match char_poly(&ints) {
            Some(p) => poly_roots(p, n)?,
            None => schur_eigenvalues(m)?,
        }
    };
    sort_spectrum(&mut eig);
    Ok(eig)
}

fn schur_eigenvalues(m: DMatrix<f64>) -> Result<Vec<Complex64>, MetricsError> {
    let n = m.nrows();
    Ok(nalgebra::Schur::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or(MetricsError::EigensolverNoConvergence(n))?
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect())
}

/// Coefficients of det(xI − A), leading first, by Berkowitz's division-free
/// recurrence. `None` on i128 overflow.
pub fn char_poly(a: &[Vec<i128>]) -> Option<Vec<i128>> {
    let mut c = vec![1i128];
    for k in 0..a.len() {
        // leading (k+1)x(k+1) block: [[A_k, col], [row, a_kk]]
        let col: Vec<i128> = (0..k).map(|i| a[i][k]).collect();
        let mut t = vec![1, -a[k][k]];
        let mut v = col;
        for _ in 0..k {
            let dot = (0..k).try_fold(0i128, |acc, j| acc.checked_add(a[k][j].checked_mul(v[j])?))?;
            t.push(dot.checked_neg()?);
            v = (0..k)
                .map(|i| (0..k).try_fold(0i128, |acc, j| acc.checked_add(a[i][j].checked_mul(v[j])?)))
                .collect::<Option<Vec<_>>>()?;
        }
        // next = T c with T the lower-triangular Toeplitz matrix on t
        let next = (0..k + 2)
            .map(|i| {
                (0..=i.min(k)).try_fold(0i128, |acc, j| acc.checked_add(t[i - j].checked_mul(c[j])?))
            })
            .collect::<Option<Vec<_>>>()?;
        c = next;
    }
    Some(c)
}

fn eval(p: &[i128], x: i128) -> Option<i128> {
    p.iter().try_fold(0i128, |acc, &c| acc.checked_mul(x)?.checked_add(c))
}

/// Synthetic division by (x − r); the caller guarantees r is a root.
fn deflate(p: &[i128], r: i128) -> Option<Vec<i128>> {
    let mut q = Vec::with_capacity(p.len() - 1);
    let mut acc = 0i128;
    for &c in &p[..p.len() - 1] {
        acc = acc.checked_mul(r)?.checked_add(c)?;
        q.push(acc);
    }
    Some(q)
}

/// Roots of a monic integer polynomial whose roots have modulus at most `bound`.
fn poly_roots(mut p: Vec<i128>, bound: usize) -> Result<Vec<Complex64>, MetricsError> {
    let mut roots = Vec::with_capacity(p.len() - 1);
    let bound = bound as i128;
    // rational roots of a monic integer polynomial are integers
    for r in std::iter::once(0).chain((1..=bound).flat_map(|k| [k, -k])) {
        while p.len() > 1 && eval(&p, r) == Some(0) {
            match deflate(&p, r) {
                Some(q) => p = q,
                None => break,
            }
            roots.push(Complex64::new(r as f64, 0.0));
        }
    }
    let d = p.len() - 1;
    if d > 0 {
        // companion matrix of x^d + p1 x^(d-1) + ... + pd
        let comp = DMatrix::from_fn(d, d, |i, j| {
            if i == 0 {
                -(p[j + 1] as f64)
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        roots.extend(schur_eigenvalues(comp)?);
    }
    Ok(roots)
}

fn sort_spectrum(eig: &mut [Complex64]) {
    eig.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Euclidean distance between sorted spectra, shorter spectrum zero-padded.
pub fn spectral_distance(a: &Dsm, b: &Dsm) -> Result<f64, MetricsError> {
    let (mut sa, mut sb) = (spectrum(a)?, spectrum(b)?);
    let n = sa.len().max(sb.len());
    for s in [&mut sa, &mut sb] {
        if s.len() < n {
            s.resize(n, Complex64::new(0.0, 0.0));
            sort_spectrum(s);
        }
    }
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt())
}

pub fn graph_distances(truth: &Dsm, pred: &Dsm) -> Result<GraphDistances, MetricsError> {
    Ok(GraphDistances {
        edit: edit_distance(truth, pred),
        spectral: spectral_distance(truth, pred)?,
    })
}

/// Mean and population standard deviation (Welford update).
pub fn aggregate(values: &[f64]) -> Result<Aggregate, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let k = values.len();
    Ok(Aggregate { mean, std: (m2 / k as f64).max(0.0).sqrt(), k })
}

/// Aggregates the defined values; returns how many were undefined and skipped.
pub fn aggregate_defined(values: &[Option<f64>]) -> (Option<Aggregate>, usize) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = values.len() - defined.len();
    (aggregate(&defined).ok(), skipped)
}
