//! Matches predicted component names to ground truth before scoring.

use dsm_forge::align::{align, AlignConfig};
use dsm_forge::dsm::Dsm;
use dsm_forge::gateway::HashEmbedder;

fn dsm(labels: &[&str], cells: Vec<Vec<u8>>) -> Dsm {
    Dsm::from_grid(labels.iter().map(|s| s.to_string()).collect(), cells).unwrap()
}

fn main() {
    let truth = dsm(&["Motor", "Battery", "Housing"], vec![vec![1, 1, 1], vec![1, 1, 0], vec![1, 0, 1]]);
    let pred = dsm(
        &["housing shell", "electric motor", "propulsion"],
        vec![vec![1, 1, 0], vec![1, 1, 0], vec![0, 0, 1]],
    );
    let r = align(&pred, &truth, &HashEmbedder::default(), &AlignConfig::default()).unwrap();
    for m in &r.mapping {
        println!("{} -> {} ({:.3})", pred.labels()[m.pred], truth.labels()[m.truth], m.similarity);
    }
    let names = |d: &Dsm, ix: &[usize]| ix.iter().map(|&i| d.labels()[i].clone()).collect::<Vec<_>>();
    println!("unmatched predictions: {:?}", names(&pred, &r.unmatched_pred));
    println!("unmatched truth: {:?}", names(&truth, &r.unmatched_truth));
    println!("aligned {}x{}", r.aligned_pred.len(), r.aligned_pred.len());
}
