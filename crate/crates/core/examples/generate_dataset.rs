//! Generates a small training set and the three evaluation sets, writes
//! them to disk and reads one back.
//!
//! `cargo run --example generate_dataset -- [out_dir]`

use std::path::PathBuf;

use pinc::datagen::{build_eval_sets, generate_dataset, read_dataset, write_dataset, GenerationConfig};

fn main() -> pinc::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("pinc_data"));

    let train = generate_dataset(&GenerationConfig::training(8))?;
    write_dataset(&train, &out.join("train"))?;
    let sets = build_eval_sets(4, [1, 2, 3])?;
    for (name, ds) in [("dev", &sets.dev), ("test_interp", &sets.interp), ("test_extrap", &sets.extrap)] {
        write_dataset(ds, &out.join(name))?;
    }

    for name in ["train", "dev", "test_interp", "test_extrap"] {
        let ds = read_dataset(&out.join(name))?;
        let m = &ds.manifest;
        println!(
            "{name:12} {:3} trajectories  T = {:.2} s  steps = {}  total = {:.1} s  sha256 {}",
            ds.len(),
            m.period,
            m.n_steps,
            m.total_time,
            &m.content_sha256[..12]
        );
    }
    let first = &train.trajectories[0];
    println!("first control of training trajectory 0: {:?}", first.controls[0]);
    println!("collocation times of its first interval: {:?}", first.colloc[0]);
    println!("written to {}", out.display());
    Ok(())
}
