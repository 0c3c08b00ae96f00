//! Evaluates a freshly initialized network and its exact time derivative,
//! checks the derivative against central differences and prints the physics
//! residual at that point.
//!
//! `cargo run --example time_derivative`

use pinc::autodiff::forward_with_time_derivative;
use pinc::dynamics::{lifted_derivative, to_net_state, ControlInput, PhysicalParams, StateVector};
use pinc::model::{forward, ModelConfig, ModelParams};

fn main() -> pinc::Result<()> {
    let params = ModelParams::init(&ModelConfig::default(), 7)?;
    println!("{} parameters", params.len());

    let s = to_net_state(&StateVector { x: 0.2, psi: 0.7, u: 0.4, w: 0.05, ..Default::default() });
    let u = ControlInput { fx: 1.0, fy: -0.05, fz: 2.0, mz: 0.01 };
    let t = 0.03;

    let (pred, rate) = forward_with_time_derivative(&params, &s, &u, t)?;
    let h = 1e-6;
    let up = forward(&params, &s, &u, t + h)?.to_array();
    let down = forward(&params, &s, &u, t - h)?.to_array();
    let names = ["x", "y", "z", "cos", "sin", "u", "v", "w", "r"];
    println!("{:>4} {:>12} {:>12} {:>10}", "", "d/dt exact", "central fd", "|diff|");
    for (i, (name, r)) in names.iter().zip(rate.to_array()).enumerate() {
        let fd = (up[i] - down[i]) / (2.0 * h);
        println!("{name:>4} {r:12.6} {fd:12.6} {:10.1e}", (r - fd).abs());
    }

    let f = lifted_derivative(&pred, &u, &PhysicalParams::default());
    let residual: f64 = rate.to_array().iter().zip(f.to_array()).map(|(a, b)| (a - b) * (a - b)).sum();
    println!("squared physics residual at t = {t}: {residual:.4e}");
    Ok(())
}
