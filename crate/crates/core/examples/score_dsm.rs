//! Scores a predicted screwdriver DSM against the built-in ground truth.

use dsm_forge::dsm::{Dsm, GroundTruthSet};
use dsm_forge::metrics::{cell_metrics, confusion, graph_distances};

fn main() {
    let truth = GroundTruthSet::builtin("screwdriver").unwrap().dsm;
    let mut cells = truth.cells().clone();
    cells[0][2] = 1;
    cells[2][0] = 1;
    cells[3][6] = 2;
    let pred = Dsm::from_grid(truth.labels().to_vec(), cells).unwrap();

    let c = confusion(&truth, &pred).unwrap();
    let m = cell_metrics(&c);
    let d = graph_distances(&truth, &pred).unwrap();
    println!("tp {} tn {} fp {} fn {} excluded {}", c.tp, c.tn, c.fp, c.fn_, c.excluded);
    println!("accuracy {:?} precision {:?} recall {:?} f1 {:?}", m.accuracy, m.precision, m.recall, m.f1);
    println!("edit {} spectral {:.6}", d.edit, d.spectral);
}
