//! Computes the evaluation report for the exact simulator flow and for an
//! untrained network on small dev, interpolation and extrapolation sets.
//!
//! `cargo run --release --example evaluate_vpt`

use pinc::datagen::build_eval_sets;
use pinc::dynamics::PhysicalParams;
use pinc::eval::{full_report, vpt_suite, VPT_THRESHOLD};
use pinc::losses::FlowPredictor;
use pinc::model::{ModelConfig, ModelParams};

fn main() -> pinc::Result<()> {
    let sets = build_eval_sets(5, [1, 2, 3])?;
    let physical = PhysicalParams::default();

    let oracle = FlowPredictor { physical, substeps: 10 };
    let stats = vpt_suite(&oracle, &sets.dev, VPT_THRESHOLD);
    println!("simulator flow: dev VPT {:.2} s per trajectory {:?}", stats.mean_s, stats.per_traj);

    let params = ModelParams::init(&ModelConfig::default(), 0)?;
    let report = full_report(&params, &sets, &physical, VPT_THRESHOLD, serde_json::json!({ "model": "untrained" }))?;
    println!("untrained network:");
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
