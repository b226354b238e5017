//! Algebraic properties of the cell metrics and graph distances.

mod common;

use common::{grid, pair, permute};
use dsm_forge::dsm::Dsm;
use dsm_forge::metrics::{cell_metrics, char_poly, confusion, edit_distance, spectral_distance};
use proptest::prelude::*;

fn shuffled(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

fn symmetric(n: usize) -> impl Strategy<Value = Dsm> {
    grid(n, 1).prop_map(|mut g| {
        for i in 0..g.len() {
            for j in 0..i {
                g[i][j] = g[j][i];
            }
        }
        Dsm::unlabeled(g).unwrap()
    })
}

/// Leibniz expansion over all permutations.
fn det(a: &[Vec<i128>]) -> i128 {
    fn go(a: &[Vec<i128>], row: usize, used: &mut Vec<bool>, sign: i128, acc: i128, out: &mut i128) {
        let n = a.len();
        if row == n {
            *out += sign * acc;
            return;
        }
        for j in 0..n {
            if !used[j] {
                // sign flips once per already-used column to the right of j
                let inversions = used[j + 1..].iter().filter(|&&u| u).count();
                let s = if inversions % 2 == 0 { sign } else { -sign };
                used[j] = true;
                go(a, row + 1, used, s, acc * a[row][j], out);
                used[j] = false;
            }
        }
    }
    let mut out = 0;
    go(a, 0, &mut vec![false; a.len()], 1, 1, &mut out);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn char_poly_matches_trace_and_determinant(g in (1usize..=6).prop_flat_map(|n| grid(n, 2))) {
        let a: Vec<Vec<i128>> = g.iter().map(|r| r.iter().map(|&c| i128::from(c == 1)).collect()).collect();
        let n = a.len();
        let p = char_poly(&a).unwrap();
        prop_assert_eq!(p.len(), n + 1);
        let trace: i128 = (0..n).map(|i| a[i][i]).sum();
        prop_assert_eq!(p[1], -trace);
        let sign = if n % 2 == 0 { 1 } else { -1 };
        prop_assert_eq!(p[n], sign * det(&a));
    }

    #[test]
    fn accuracy_matches_edit_identity((t, p) in pair(10, 1, 1)) {
        let n2 = (t.len() * t.len()) as f64;
        let c = confusion(&t, &p).unwrap();
        // exact in counts, and equal up to rounding as floats
        prop_assert_eq!((c.tp + c.tn) as f64, n2 - edit_distance(&t, &p));
        let acc = cell_metrics(&c).accuracy.unwrap();
        prop_assert!((acc - (1.0 - edit_distance(&t, &p) / n2)).abs() <= f64::EPSILON);
    }

    #[test]
    fn edit_is_a_metric(
        (a, b, c) in (1usize..=8).prop_flat_map(|n| (grid(n, 2), grid(n, 2), grid(n, 2)))
    ) {
        let (a, b, c) = (Dsm::unlabeled(a).unwrap(), Dsm::unlabeled(b).unwrap(), Dsm::unlabeled(c).unwrap());
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert_eq!(edit_distance(&a, &b) == 0.0, a == b);
    }

    #[test]
    fn spectral_is_symmetric((a, b) in pair(8, 2, 2)) {
        let ab = spectral_distance(&a, &b).unwrap();
        let ba = spectral_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(spectral_distance(&a, &a).unwrap() == 0.0);
    }

    #[test]
    fn spectral_ignores_relabeling((d, perm) in (1usize..=8).prop_flat_map(|n| (grid(n, 1), shuffled(n)))) {
        let d = Dsm::unlabeled(d).unwrap();
        prop_assert!(spectral_distance(&d, &permute(&d, &perm)).unwrap() <= 1e-8);
    }

    #[test]
    fn spectral_ignores_relabeling_symmetric((d, perm) in (1usize..=8).prop_flat_map(|n| (symmetric(n), shuffled(n)))) {
        prop_assert!(spectral_distance(&d, &permute(&d, &perm)).unwrap() <= 1e-8);
    }

    #[test]
    fn swapping_roles_swaps_precision_and_recall((t, p) in pair(10, 1, 1)) {
        let m = cell_metrics(&confusion(&t, &p).unwrap());
        let s = cell_metrics(&confusion(&p, &t).unwrap());
        prop_assert_eq!(m.precision, s.recall);
        prop_assert_eq!(m.recall, s.precision);
        prop_assert_eq!(m.accuracy, s.accuracy);
    }

    #[test]
    fn f1_lies_between_precision_and_recall((t, p) in pair(10, 1, 2)) {
        let m = cell_metrics(&confusion(&t, &p).unwrap());
        if let (Some(pr), Some(re), Some(f1)) = (m.precision, m.recall, m.f1) {
            prop_assert!(pr.min(re) - 1e-12 <= f1 && f1 <= pr.max(re) + 1e-12);
        }
    }
}
