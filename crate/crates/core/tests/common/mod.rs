#![allow(dead_code)]

use dsm_forge::dsm::{normalize_label, Dsm, Grid};
use proptest::prelude::*;

/// Square grid with a unit diagonal and off-diagonal cells in `0..=max_cell`.
pub fn grid(n: usize, max_cell: u8) -> impl Strategy<Value = Grid> {
    proptest::collection::vec(0u8..=max_cell, n * n).prop_map(move |flat| {
        let mut g: Grid = flat.chunks(n).map(|r| r.to_vec()).collect();
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = 1;
        }
        g
    })
}

pub fn labels(n: usize) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec("[A-Za-zé][A-Za-z0-9 ,\"é;-]{0,10}", n).prop_filter("labels must be distinct", |ls| {
        let mut norm: Vec<String> = ls.iter().map(|l| normalize_label(l)).collect();
        norm.sort();
        norm.dedup();
        norm.len() == ls.len()
    })
}

pub fn dsm(max_n: usize, max_cell: u8) -> impl Strategy<Value = Dsm> {
    (1..=max_n).prop_flat_map(move |n| (labels(n), grid(n, max_cell))).prop_map(|(l, g)| Dsm::from_grid(l, g).unwrap())
}

/// Two same-size unlabeled DSMs.
pub fn pair(max_n: usize, truth_max: u8, pred_max: u8) -> impl Strategy<Value = (Dsm, Dsm)> {
    (1..=max_n).prop_flat_map(move |n| (grid(n, truth_max), grid(n, pred_max))).prop_map(|(a, b)| {
        (Dsm::unlabeled(a).unwrap(), Dsm::unlabeled(b).unwrap())
    })
}

/// Cell-by-cell counts straight from the definitions: unsure predictions are
/// skipped, everything else lands in exactly one bucket.
pub fn brute_confusion(truth: &Grid, pred: &Grid) -> (u64, u64, u64, u64, u64) {
    let (mut tp, mut tn, mut fp, mut fneg, mut skipped) = (0, 0, 0, 0, 0);
    let n = truth.len();
    for i in 0..n {
        for j in 0..n {
            let (t, p) = (truth[i][j], pred[i][j]);
            if p == 2 {
                skipped += 1;
            } else if t == 1 && p == 1 {
                tp += 1;
            } else if t == 0 && p == 0 {
                tn += 1;
            } else if t == 0 {
                fp += 1;
            } else {
                fneg += 1;
            }
        }
    }
    (tp, tn, fp, fneg, skipped)
}

/// `P A Pᵀ` for the permutation `perm`: new row i is old row perm[i].
pub fn permute(d: &Dsm, perm: &[usize]) -> Dsm {
    d.select(perm)
}
