//! Chunks two references, indexes them and retrieves context for a query.

use dsm_forge::corpus::{chunk_text, MergedReference, RagConfig, RefClass, VectorIndex};
use dsm_forge::gateway::HashEmbedder;

fn main() {
    let refs = vec![
        MergedReference {
            rclass: RefClass::R1,
            sources: vec!["[2020 Smith] R1-Study".into()],
            text: "The motor drives the transmission. ".repeat(40),
        },
        MergedReference {
            rclass: RefClass::R2,
            sources: vec!["[2018 Lee] R2-Handbook".into()],
            text: "The battery holder is clipped into the housing. ".repeat(40),
        },
    ];
    let cfg = RagConfig { chunk_size: 400, overlap: 50, top_k: 3 };
    let chunks = chunk_text("R1", &refs[0].text, &cfg).unwrap();
    println!("R1 splits into {} chunks starting at {:?}", chunks.len(), chunks.iter().map(|c| c.start).collect::<Vec<_>>());

    let embedder = HashEmbedder::default();
    let index = VectorIndex::from_references(&refs, &cfg, &embedder).unwrap();
    for hit in index.retrieve("battery housing contact", &embedder, cfg.top_k, Some(&[RefClass::R2])).unwrap() {
        println!("{:.3} {}#{}", hit.score, hit.chunk.doc_id, hit.chunk.seq);
    }
}
