//! Serialization and construction properties of DSMs.

mod common;

use common::{dsm, grid, labels};
use dsm_forge::dsm::{worst_case_dsm, Dsm};
use proptest::prelude::*;

#[test]
fn worst_case_counts() {
    for n in 1..50 {
        let d = worst_case_dsm(n).unwrap();
        let flat: Vec<u8> = d.cells().iter().flatten().copied().collect();
        assert_eq!(flat.iter().filter(|&&c| c == 1).count(), n, "n = {n}");
        assert_eq!(flat.iter().filter(|&&c| c == 2).count(), n * n - n, "n = {n}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn json_round_trip(d in dsm(10, 2)) {
        prop_assert_eq!(Dsm::from_json(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn csv_round_trip(d in dsm(10, 2)) {
        prop_assert_eq!(Dsm::from_csv(&d.to_csv()).unwrap(), d);
    }

    #[test]
    fn mutated_grids_are_rejected(
        (ls, g, kind, i, j, v) in (2usize..=8).prop_flat_map(|n| (labels(n), grid(n, 2), 0u8..4, 0..n, 0..n, 3i64..100))
    ) {
        let mut cells: Vec<Vec<i64>> = g.iter().map(|r| r.iter().map(|&c| c as i64).collect()).collect();
        let n = cells.len();
        match kind {
            // value out of range
            0 => cells[i][j] = if v % 2 == 0 { v } else { -v },
            // diagonal not one
            1 => cells[i][i] = if v % 2 == 0 { 0 } else { 2 },
            // ragged row
            2 => { cells[i].pop(); }
            // missing row
            _ => { cells.remove(i); }
        }
        prop_assert!(Dsm::new(ls.clone(), cells).is_err(), "kind {} accepted at n {}", kind, n);
        // the untouched grid is fine
        prop_assert!(Dsm::from_grid(ls, g).is_ok());
    }
}
