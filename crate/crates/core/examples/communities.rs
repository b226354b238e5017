//! Leiden community detection on two cliques joined by one edge.

use dsm_forge::graphrag::{leiden, modularity, WeightedGraph};

fn main() {
    let mut g = WeightedGraph::new(8);
    for base in [0, 4] {
        for i in 0..4 {
            for j in i + 1..4 {
                g.add_edge(base + i, base + j, 1.0);
            }
        }
    }
    g.add_edge(3, 4, 1.0);
    let part = leiden(&g, 1.0, 42, 64);
    println!("membership {part:?}");
    println!("modularity {:.6}", modularity(&g, &part, 1.0));
}
