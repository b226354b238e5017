//! Matching predicted component names to ground-truth names and projecting
//! the predicted DSM onto the matched set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsm::{normalize_label, Dsm};
use crate::gateway::{embed, Embedder, GatewayError};

const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("embedder failure: {0}")]
    Embedder(#[from] GatewayError),
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
}

fn default_threshold() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_true")]
    pub exact_match_shortcut: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { threshold: default_threshold(), exact_match_shortcut: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub truth: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// One-to-one, ordered by truth index.
    pub mapping: Vec<MatchedPair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
    pub aligned_pred: Dsm,
    pub aligned_truth: Dsm,
}

/// Min-cost assignment of every row (rows ≤ cols). Returns the column of each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // row matched to each column, 1-based, 0 = free
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Best total similarity over `rows × cols` matchings of size `min(|rows|, |cols|)`.
fn best_total(sim: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    if rows.len() <= cols.len() {
        let cost: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|&j| -sim[i][j]).collect()).collect();
        hungarian(&cost).iter().enumerate().map(|(r, &c)| sim[rows[r]][cols[c]]).sum()
    } else {
        let cost: Vec<Vec<f64>> = cols.iter().map(|&j| rows.iter().map(|&i| -sim[i][j]).collect()).collect();
        hungarian(&cost).iter().enumerate().map(|(c, &r)| sim[rows[r]][cols[c]]).sum()
    }
}

/// Maximum-total-similarity one-to-one matching of rows (predictions) to
/// columns (truth). Covers `min(rows, cols)` pairs. Among optimal matchings
/// the one whose sorted `(row, col)` list is lexicographically smallest wins.
pub fn assignment(sim: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let r = sim.len();
    let c = sim.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Vec::new();
    }
    let all_rows: Vec<usize> = (0..r).collect();
    let all_cols: Vec<usize> = (0..c).collect();
    let target = best_total(sim, &all_rows, &all_cols);
    let size = r.min(c);
    let tol = TIE_EPS * (1.0 + target.abs());

    let mut fixed: Vec<(usize, usize)> = Vec::new();
    let mut fixed_sum = 0.0;
    let mut free_cols = all_cols;
    for i in 0..r {
        if fixed.len() == size {
            break;
        }
        let later: Vec<usize> = (i + 1..r).collect();
        let still_needed = size - fixed.len() - 1;
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != j).collect();
            if later.len().min(rest_cols.len()) < still_needed {
                continue;
            }
            let total = fixed_sum + sim[i][j] + best_total(sim, &later, &rest_cols);
            if total >= target - tol {
                chosen = Some(pos);
                break;
            }
        }
        if let Some(pos) = chosen {
            let j = free_cols.remove(pos);
            fixed_sum += sim[i][j];
            fixed.push((i, j));
        }
    }
    fixed
}

/// Matches `pred` labels to `truth` labels and projects both DSMs onto the
/// matched set in truth order. Pairs below the threshold are dropped.
pub fn align(pred: &Dsm, truth: &Dsm, embedder: &dyn Embedder, cfg: &AlignConfig) -> Result<AlignmentResult, AlignError> {
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(AlignError::InvalidThreshold(cfg.threshold));
    }
    let mut mapping: Vec<MatchedPair> = Vec::new();
    let mut pred_free: Vec<usize> = (0..pred.len()).collect();
    let mut truth_free: Vec<usize> = (0..truth.len()).collect();

    if cfg.exact_match_shortcut {
        let pred_norm: Vec<String> = pred.labels().iter().map(|l| normalize_label(l)).collect();
        truth_free.retain(|&t| {
            let norm = normalize_label(&truth.labels()[t]);
            match pred_free.iter().position(|&p| pred_norm[p] == norm) {
                Some(pos) => {
                    mapping.push(MatchedPair { pred: pred_free.remove(pos), truth: t, similarity: 1.0 });
                    false
                }
                None => true,
            }
        });
    }

    if !pred_free.is_empty() && !truth_free.is_empty() {
        let mut texts: Vec<String> = pred_free.iter().map(|&i| pred.labels()[i].clone()).collect();
        texts.extend(truth_free.iter().map(|&j| truth.labels()[j].clone()));
        let vectors = embed(embedder, &texts)?;
        let (pv, tv) = vectors.split_at(pred_free.len());
        let sim: Vec<Vec<f64>> = pv.iter().map(|p| tv.iter().map(|t| p.cosine(t)).collect()).collect();
        for (r, c) in assignment(&sim) {
            if sim[r][c] >= cfg.threshold {
                mapping.push(MatchedPair { pred: pred_free[r], truth: truth_free[c], similarity: sim[r][c] });
            }
        }
    }

    mapping.sort_by_key(|m| m.truth);
    let unmatched_pred = (0..pred.len()).filter(|i| !mapping.iter().any(|m| m.pred == *i)).collect();
    let unmatched_truth = (0..truth.len()).filter(|j| !mapping.iter().any(|m| m.truth == *j)).collect();
    let pred_idx: Vec<usize> = mapping.iter().map(|m| m.pred).collect();
    let truth_idx: Vec<usize> = mapping.iter().map(|m| m.truth).collect();
    Ok(AlignmentResult {
        aligned_pred: pred.select(&pred_idx),
        aligned_truth: truth.select(&truth_idx),
        mapping,
        unmatched_pred,
        unmatched_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::HashEmbedder;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_by_two_prefers_cross_pairs() {
        assert_eq!(assignment(&[vec![0.9, 0.8], vec![0.85, 0.1]]), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn identity_and_ties() {
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(assignment(&id), vec![(0, 0), (1, 1), (2, 2)]);
        let flat = vec![vec![0.5; 3]; 3];
        assert_eq!(assignment(&flat), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn rectangular_matrices() {
        // more predictions than truth: the weak row stays out
        let tall = vec![vec![0.9, 0.0], vec![0.1, 0.2], vec![0.0, 0.8]];
        assert_eq!(assignment(&tall), vec![(0, 0), (2, 1)]);
        let wide = vec![vec![0.1, 0.7, 0.2]];
        assert_eq!(assignment(&wide), vec![(0, 1)]);
        assert!(assignment(&[]).is_empty());
    }

    #[test]
    fn token_bag_alignment() {
        let truth = Dsm::new(labels(&["Motor", "Housing", "Bit"]), vec![vec![1, 1, 0], vec![1, 1, 1], vec![0, 1, 1]]).unwrap();
        let pred = Dsm::new(
            labels(&["motor unit", "casing housing", "drill bit", "battery pack"]),
            vec![vec![1, 0, 0, 1], vec![1, 1, 0, 0], vec![0, 1, 1, 0], vec![1, 0, 0, 1]],
        )
        .unwrap();
        let r = align(&pred, &truth, &HashEmbedder::default(), &AlignConfig::default()).unwrap();
        assert_eq!(r.mapping.len(), 3);
        let half = 1.0 / 2f64.sqrt();
        for (k, m) in r.mapping.iter().enumerate() {
            assert_eq!((m.pred, m.truth), (k, k));
            assert!((m.similarity - half).abs() < 1e-12);
        }
        assert_eq!(r.unmatched_pred, vec![3]);
        assert!(r.unmatched_truth.is_empty());
        assert_eq!(r.aligned_pred.cells(), &vec![vec![1, 0, 0], vec![1, 1, 0], vec![0, 1, 1]]);
        assert_eq!(r.aligned_truth, truth);
    }

    #[test]
    fn permuted_exact_labels() {
        let truth = Dsm::new(labels(&["A", "B", "C"]), vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 1]]).unwrap();
        let pred = truth.select(&[2, 0, 1]);
        let r = align(&pred, &truth, &HashEmbedder::default(), &AlignConfig::default()).unwrap();
        assert!(r.mapping.iter().all(|m| m.similarity == 1.0));
        assert_eq!(r.aligned_pred, truth);
        assert_eq!(r.aligned_truth, truth);
    }

    #[test]
    fn no_overlap_gives_empty_alignment() {
        let truth = Dsm::new(labels(&["Alpha", "Beta"]), vec![vec![1, 0], vec![0, 1]]).unwrap();
        let pred = Dsm::new(labels(&["gamma", "delta"]), vec![vec![1, 0], vec![0, 1]]).unwrap();
        let r = align(&pred, &truth, &HashEmbedder::default(), &AlignConfig::default()).unwrap();
        assert!(r.mapping.is_empty());
        assert_eq!(r.aligned_pred.len(), 0);
        assert_eq!(r.aligned_truth.len(), 0);
        assert_eq!(r.unmatched_pred, vec![0, 1]);
    }

    #[test]
    fn threshold_validated() {
        let d = Dsm::unlabeled(vec![vec![1]]).unwrap();
        let cfg = AlignConfig { threshold: 1.5, ..Default::default() };
        assert_eq!(align(&d, &d, &HashEmbedder::default(), &cfg), Err(AlignError::InvalidThreshold(1.5)));
    }
}
