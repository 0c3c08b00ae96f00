//! Desk-scale training run: 40 training and 20 dev trajectories, the
//! data + physics losses with gradient normalization.
//!
//! `cargo run --release --example train_desk -- [epochs] [zero]`
//!
//! Passing `zero` starts from a zero output layer instead of the Glorot draw.

use pinc::datagen::{generate_dataset, GenerationConfig};
use pinc::eval::{vpt_suite, VPT_THRESHOLD};
use pinc::model::ModelConfig;
use pinc::trainer::{TrainConfig, Trainer};

fn main() -> pinc::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let train_set = generate_dataset(&GenerationConfig::training(40))?;
    let dev = generate_dataset(&GenerationConfig::evaluation("dev", 20, 0.08, 1))?;
    let config = TrainConfig { n_epoch: epochs, ..Default::default() };
    let zero = std::env::args().nth(2).is_some_and(|a| a == "zero");
    let model = ModelConfig { zero_output_init: zero, ..Default::default() };
    let params = pinc::model::ModelParams::init(&model, config.seed)?;
    let mut trainer = Trainer::new(params, &train_set, Some(&dev), config)?;
    println!("initial dev log10 loss {:.3}", trainer.history().initial_log10_dev.unwrap_or(f64::NAN));
    for _ in 0..epochs {
        let r = trainer.run_epoch()?;
        if r.epoch % 50 == 0 || r.epoch + 1 == epochs {
            println!(
                "epoch {:5}  data {:7.3}  phy {:7.3}  dev {:7.3}  lr {:.1e}  {:.1}s",
                r.epoch,
                r.log10_losses.values().next().copied().unwrap_or(f64::NAN),
                r.log10_losses.values().nth(1).copied().unwrap_or(f64::NAN),
                r.log10_dev.unwrap_or(f64::NAN),
                r.lr,
                r.seconds
            );
        }
    }
    let (params, _) = trainer.finish();
    let stats = vpt_suite(&params, &dev, VPT_THRESHOLD);
    println!("dev VPT {:.3} +- {:.3} s", stats.mean_s, stats.std_s);
    Ok(())
}
