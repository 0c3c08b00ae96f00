//! Simulates the vehicle under a constant surge force with a small yaw
//! moment and prints the state every half second.
//!
//! `cargo run --example simulate_vehicle`

use pinc::dynamics::{simulate_trajectory, state_derivative, ControlInput, PhysicalParams, StateVector};

fn main() -> pinc::Result<()> {
    let p = PhysicalParams::default();
    p.validate()?;
    println!("net weight (gravity minus buoyancy): {:.3} N", p.net_weight());

    let x0 = StateVector::default();
    let u = ControlInput { fx: 2.0, fy: 0.0, fz: 0.0, mz: 0.05 };
    let period = 0.08;
    let controls = vec![u; 65];
    let states = simulate_trajectory(&x0, &controls, &p, period, 10)?;

    println!("{:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "t", "x", "y", "z", "psi", "u", "r");
    for (k, s) in states.iter().enumerate().step_by(6) {
        println!(
            "{:5.2} {:8.4} {:8.4} {:8.4} {:8.4} {:8.4} {:8.4}",
            k as f64 * period,
            s.x,
            s.y,
            s.z,
            s.psi,
            s.u,
            s.r
        );
    }
    let last = states.last().expect("non-empty");
    let rate = state_derivative(last, &u, &p);
    println!("final surge acceleration {:.2e} m/s^2", rate.u);
    Ok(())
}
