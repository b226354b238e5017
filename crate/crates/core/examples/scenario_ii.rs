//! Scenario ii: the model names the components, fills in the matrix and is
//! checked by the validator. Two of its six components are spurious.

use dsm_forge::dsm::{render_grid, GroundTruthSet};
use dsm_forge::runner::{run_config, BackendSpec, ExperimentConfig, RunOptions};
use dsm_forge::gateway::Rule;

fn main() {
    let truth = GroundTruthSet::builtin("cubesat").unwrap().dsm;
    let mut names: Vec<String> = truth.labels()[..4].to_vec();
    names.extend(["Propulsion".to_string(), "Deployment Mechanism".to_string()]);
    let mut cells = truth.cells().clone();
    cells[4] = vec![0, 0, 0, 1, 1, 0];
    cells[5] = vec![0, 0, 0, 0, 0, 1];
    let rules = vec![
        Rule { contains: "You are a validator".into(), reply: "Valid".into() },
        Rule { contains: "identify the major components".into(), reply: format!("final response = {names:?}") },
    ];
    let mut cfg = ExperimentConfig::from_json(
        r#"{"concept_name": "CubeSat", "relationship_type": "whole-part", "ground_truth": "cubesat",
            "repetitions": 3, "backend": {"kind": "mock"}}"#,
    )
    .unwrap();
    cfg.backend = BackendSpec::Mock {
        model_id: "mock".into(),
        rules,
        fallback: Some(format!("final response = {}", render_grid(&cells))),
    };

    let run = run_config(&cfg, &RunOptions::default()).unwrap();
    let rec = &run.records[0];
    let a = rec.alignment.as_ref().unwrap();
    println!("identified {:?}", rec.identified_components.as_ref().unwrap());
    println!("aligned {}x{}, unmatched predictions {:?}", a.aligned_pred.len(), a.aligned_pred.len(), a.unmatched_pred);
    println!("raw accuracy {:?}", run.report.raw.accuracy.map(|x| x.mean));
    println!("aligned accuracy {:?}", run.report.aligned.unwrap().accuracy.map(|x| x.mean));
}
