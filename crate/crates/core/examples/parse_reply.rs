//! Pulls a matrix and a component list out of chatty model output.

use dsm_forge::parse::{extract_components, extract_matrix, parse_verdict};

const REPLY: &str = r#"<think>the motor touches the transmission...</think>
Here is my analysis.
```python
final response = [[1, 1, 0], [1, 1, 2], [0, 2, 1]]
```"#;

fn main() {
    let grid = extract_matrix(REPLY, Some(3)).unwrap();
    println!("matrix: {grid:?}");
    let comps = extract_components(r#"final response = ["Bit", "Motor", "Housing"]"#, Some(3)).unwrap();
    println!("components: {comps:?}");
    println!("verdict: {:?}", parse_verdict("**Valid**"));
}
