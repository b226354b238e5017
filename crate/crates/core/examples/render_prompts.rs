//! Renders the relationship, identification and validator prompts.

use dsm_forge::prompt::{identification_prompt, relationship_prompt, validator_prompt, PromptSpec};

fn main() {
    let components = ["Bit", "Transmission", "Motor"].map(String::from).to_vec();
    let spec = PromptSpec::with_components("power screwdriver", "proximity (in contact)", "", components);
    let rel = relationship_prompt(&spec).unwrap();
    println!("{}\n", rel.text);
    println!("{}\n", identification_prompt(&spec, 7).unwrap().text);
    println!("{}", validator_prompt(&rel.text, "final response = [[1]]").unwrap().text);
}
