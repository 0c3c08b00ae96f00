//! Computes the data and physics loss gradients of an untrained model on a
//! small batch and combines them with each scheme.
//!
//! `cargo run --release --example gradient_schemes`

use pinc::datagen::{generate_dataset, GenerationConfig};
use pinc::gradcombine::{clip_norm, combine, GradScheme, DEFAULT_CLIP};
use pinc::losses::{loss_gradient, Batch, LossKind};
use pinc::model::{ModelConfig, ModelParams};

fn main() -> pinc::Result<()> {
    let config = GenerationConfig::training(3);
    let data = generate_dataset(&config)?;
    let batch = Batch::from_trajectories(&data.trajectories);
    let params = ModelParams::init(&ModelConfig::default(), 0)?;

    let mut grads = Vec::new();
    for kind in [LossKind::Data, LossKind::Physics, LossKind::Rollout] {
        let (value, g) = loss_gradient(&params, &batch, kind, 10, &config.physical)?;
        println!("{:10} loss {value:10.3e}  |grad| {:9.3e}", kind.name(), g.norm());
        grads.push(g);
    }
    let cos = grads[0].dot(&grads[1]) / (grads[0].norm() * grads[1].norm());
    println!("cosine(data, phy) = {cos:.3}");

    let weights = [1.0, 0.5, 1.0];
    for scheme in [GradScheme::Sum, GradScheme::Config, GradScheme::Norm] {
        let g = clip_norm(&combine(scheme, &grads, &weights)?, DEFAULT_CLIP);
        let proj: Vec<String> = grads.iter().map(|gi| format!("{:+.3}", g.dot(gi) / (g.norm() * gi.norm()))).collect();
        println!("{scheme:?}: |g| = {:.3e}, cosine with each loss gradient [{}]", g.norm(), proj.join(", "));
    }
    Ok(())
}
