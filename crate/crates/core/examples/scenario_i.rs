//! Scenario i end to end: given components, a mock model answers five times
//! and the aggregate report is written to a temporary directory.

use dsm_forge::dsm::{render_grid, GroundTruthSet};
use dsm_forge::runner::{emit_reports, run_config, ExperimentConfig, RunOptions};

fn main() {
    let truth = GroundTruthSet::builtin("screwdriver").unwrap().dsm;
    let mut cells = truth.cells().clone();
    cells[1][5] = 2;
    let reply = format!("final response = {}", render_grid(&cells));
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "name": "screwdriver-llm",
            "concept_name": "power screwdriver",
            "relationship_type": "proximity (in contact)",
            "predicted_components": {},
            "ground_truth": "screwdriver",
            "backend": {{"kind": "mock", "model_id": "mock", "fallback": {}}}
        }}"#,
        serde_json::to_string(truth.labels()).unwrap(),
        serde_json::to_string(&reply).unwrap()
    ))
    .unwrap();

    let run = run_config(&cfg, &RunOptions { parallel: 4, ..Default::default() }).unwrap();
    let r = &run.report;
    println!("ok {} of {}", r.status.ok, r.repetitions);
    println!("accuracy {:?}", r.raw.accuracy);
    println!("edit {:?}", r.raw.edit);

    let out = std::env::temp_dir().join("dsm-forge-scenario-i");
    for f in emit_reports(&[run], &[], &out).unwrap() {
        println!("wrote {}", f.display());
    }
}
