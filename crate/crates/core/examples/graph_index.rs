//! Builds a small graph index with a rule-based mock model and answers a query.

use dsm_forge::corpus::{chunk_text, RagConfig};
use dsm_forge::gateway::{RuleBackend, Session};
use dsm_forge::graphrag::{GraphIndex, GraphRagConfig};

fn main() {
    let backend = RuleBackend::new("mock")
        .rule("Many entities and relationships were missed", "")
        .rule(
            "extracting a knowledge graph",
            "ENTITY|Motor|component|Converts electrical energy\n\
             ENTITY|Transmission|component|Reduces speed\n\
             ENTITY|Battery|component|Stores energy\n\
             RELATION|Motor|Transmission|2|Gear mesh\n\
             RELATION|Battery|Motor|1|Supplies current",
        )
        .rule("Write a concise technical summary", "The drive train: battery feeds the motor, which turns the transmission.")
        .rule("Using only the community report", "Motor is in contact with the transmission.")
        .with_fallback("Motor and transmission are in contact; battery connects electrically.");

    let text = "The battery powers the motor. The motor drives the transmission. ".repeat(20);
    let chunks = chunk_text("R1", &text, &RagConfig::default()).unwrap();
    let mut session = Session::new(&backend, None);
    let cfg = GraphRagConfig::default();
    let index = GraphIndex::build(&chunks, "power screwdriver", &mut session, &cfg).unwrap();
    println!("{} entities, {} relations, {} communities", index.entities.len(), index.relations.len(), index.communities.len());

    let answer = index.answer("Which components touch the motor?", &mut session, None, &cfg).unwrap();
    println!("answer: {}", answer.text);
    println!("{} model calls", session.exchanges().len());
}
