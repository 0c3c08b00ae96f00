//! File-level workflow: generate datasets, train a short run with
//! checkpoints and metrics, then write an evaluation report, all inside a
//! scratch directory.
//!
//! `cargo run --release --example experiment_workflow -- [out_dir] [epochs]`

use std::path::PathBuf;

use pinc::datagen::{build_eval_sets, generate_dataset, GenerationConfig};
use pinc::eval::VPT_THRESHOLD;
use pinc::experiment::{run_training, write_report, RunConfig};

fn main() -> pinc::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("pinc_run"));
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);

    let train = generate_dataset(&GenerationConfig::training(10))?;
    let sets = build_eval_sets(5, [1, 2, 3])?;

    let mut run = RunConfig { checkpoint_every: 20, ..Default::default() };
    run.train.n_epoch = epochs;
    run.train.n_batch = 5;
    let output = run_training(&run, &train, Some(&sets.dev), &out)?;
    println!(
        "dev log10 loss {:.3} -> {:.3} after {} epochs",
        output.history.initial_log10_dev.unwrap_or(f64::NAN),
        output.history.final_log10_dev().unwrap_or(f64::NAN),
        epochs
    );

    let report = write_report(&output.params, &sets, &out.join("report.json"), VPT_THRESHOLD)?;
    println!("VPT dev {:.2} s, interp {:.2} s, extrap {:.2} s", report.vpt1.mean_s, report.vpt2.mean_s, report.vpt3.mean_s);
    let mut files: Vec<String> = std::fs::read_dir(&out)?.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect();
    files.sort();
    println!("{}: {}", out.display(), files.join(" "));
    Ok(())
}
