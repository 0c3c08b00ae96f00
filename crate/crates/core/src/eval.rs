//! Evaluation suite: one-step, rollout and physics losses on the dev and
//! test sets, and the valid prediction time (VPT).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, EvalSets, Trajectory};
use crate::dynamics::{to_net_state, NetState, PhysicalParams};
use crate::error::Result;
use crate::losses::{data_loss, physics_loss, rollout_loss, Batch, Predictor};
use crate::model::renormalize_yaw;
use crate::trainer::log10_floored;

/// Position error bound of the VPT metric, in metres.
pub const VPT_THRESHOLD: f64 = 0.05;
/// Rollout horizon of the rollout error.
pub const EVAL_ROLLOUT_STEPS: usize = 10;

pub fn one_step_mse<P: Predictor + ?Sized>(pred: &P, dataset: &Dataset) -> Result<f64> {
    data_loss(pred, &Batch::from_trajectories(&dataset.trajectories))
}

pub fn rollout_mse<P: Predictor + ?Sized>(pred: &P, dataset: &Dataset, n_pred: usize) -> Result<f64> {
    rollout_loss(pred, &Batch::from_trajectories(&dataset.trajectories), n_pred)
}

pub fn physics_mse<P: Predictor + ?Sized>(pred: &P, dataset: &Dataset, physical: &PhysicalParams) -> Result<f64> {
    physics_loss(pred, &Batch::from_trajectories(&dataset.trajectories), physical)
}

/// Full-length rollouts from the first state of each trajectory. Returns the
/// predicted states after each step; a rollout that stops producing finite
/// states is padded with NaN from that step on.
pub fn rollout_predictions<P: Predictor + ?Sized>(pred: &P, trajs: &[Trajectory]) -> Vec<Vec<NetState>> {
    let nan = NetState::from_array([f64::NAN; 9]);
    let mut states: Vec<NetState> = trajs.iter().map(|t| to_net_state(&t.states[0])).collect();
    let mut alive: Vec<bool> = vec![true; trajs.len()];
    let mut out: Vec<Vec<NetState>> = trajs.iter().map(|t| Vec::with_capacity(t.controls.len())).collect();
    let steps = trajs.iter().map(|t| t.controls.len()).max().unwrap_or(0);
    for k in 0..steps {
        let idx: Vec<usize> = (0..trajs.len()).filter(|&i| alive[i] && k < trajs[i].controls.len()).collect();
        let points: Vec<_> = idx.iter().map(|&i| (states[i], trajs[i].controls[k], trajs[i].period)).collect();
        let results: Vec<Option<NetState>> = match pred.predict(&points, false) {
            Ok(r) => r.into_iter().map(|(s, _)| Some(s)).collect(),
            // find the offending rollouts one by one
            Err(_) => points.iter().map(|p| pred.predict(std::slice::from_ref(p), false).ok().map(|r| r[0].0)).collect(),
        };
        for (&i, r) in idx.iter().zip(results) {
            match r.filter(NetState::is_finite) {
                Some(mut s) => {
                    if pred.renormalizes_yaw() {
                        renormalize_yaw(&mut s);
                    }
                    states[i] = s;
                    out[i].push(s);
                }
                None => alive[i] = false,
            }
        }
    }
    for (o, t) in out.iter_mut().zip(trajs) {
        o.resize(t.controls.len(), nan);
    }
    out
}

/// Euclidean position error after each rollout step.
pub fn rollout_position_errors<P: Predictor + ?Sized>(pred: &P, trajs: &[Trajectory]) -> Vec<Vec<f64>> {
    rollout_predictions(pred, trajs)
        .iter()
        .zip(trajs)
        .map(|(p, t)| p.iter().zip(&t.states[1..]).map(|(s, x)| s.position_error(&to_net_state(x))).collect())
        .collect()
}

/// `k* T`, where `k*` is the largest `k` with every error in steps `1..=k`
/// within `threshold`.
pub fn vpt_from_errors(errors: &[f64], period: f64, threshold: f64) -> f64 {
    let k = errors.iter().take_while(|&&e| e <= threshold).count();
    k as f64 * period
}

pub fn vpt<P: Predictor + ?Sized>(pred: &P, traj: &Trajectory, threshold: f64) -> f64 {
    let errors = rollout_position_errors(pred, std::slice::from_ref(traj));
    vpt_from_errors(&errors[0], traj.period, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VptStats {
    pub mean_s: f64,
    /// Population standard deviation.
    pub std_s: f64,
    pub per_traj: Vec<f64>,
}

impl VptStats {
    pub fn from_values(per_traj: Vec<f64>) -> Self {
        let n = per_traj.len().max(1) as f64;
        let mean_s = per_traj.iter().sum::<f64>() / n;
        let std_s = (per_traj.iter().map(|v| (v - mean_s).powi(2)).sum::<f64>() / n).sqrt();
        VptStats { mean_s, std_s, per_traj }
    }
}

pub fn vpt_suite<P: Predictor + ?Sized>(pred: &P, dataset: &Dataset, threshold: f64) -> VptStats {
    let errors = rollout_position_errors(pred, &dataset.trajectories);
    VptStats::from_values(
        errors.iter().zip(&dataset.trajectories).map(|(e, t)| vpt_from_errors(e, t.period, threshold)).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_echo: serde_json::Value,
    /// log10 one-step loss, dev set.
    #[serde(rename = "L1")]
    pub l1: f64,
    /// log10 10-step rollout loss, dev set.
    #[serde(rename = "L2")]
    pub l2: f64,
    /// log10 physics loss, dev set.
    #[serde(rename = "L3")]
    pub l3: f64,
    /// log10 one-step loss, interpolation test set.
    #[serde(rename = "L4")]
    pub l4: f64,
    /// log10 one-step loss, extrapolation test set.
    #[serde(rename = "L5")]
    pub l5: f64,
    #[serde(rename = "VPT1")]
    pub vpt1: VptStats,
    #[serde(rename = "VPT2")]
    pub vpt2: VptStats,
    #[serde(rename = "VPT3")]
    pub vpt3: VptStats,
    pub threshold_m: f64,
    pub horizon_s: f64,
}

pub fn full_report<P: Predictor + ?Sized>(
    pred: &P,
    sets: &EvalSets,
    physical: &PhysicalParams,
    threshold: f64,
    config_echo: serde_json::Value,
) -> Result<EvalReport> {
    let dev = &sets.dev;
    let horizon_s = dev.trajectories.first().map_or(0.0, |t| t.controls.len() as f64 * t.period);
    Ok(EvalReport {
        config_echo,
        l1: log10_floored(one_step_mse(pred, dev)?),
        l2: log10_floored(rollout_mse(pred, dev, EVAL_ROLLOUT_STEPS)?),
        l3: log10_floored(physics_mse(pred, dev, physical)?),
        l4: log10_floored(one_step_mse(pred, &sets.interp)?),
        l5: log10_floored(one_step_mse(pred, &sets.extrap)?),
        vpt1: vpt_suite(pred, dev, threshold),
        vpt2: vpt_suite(pred, &sets.interp, threshold),
        vpt3: vpt_suite(pred, &sets.extrap, threshold),
        threshold_m: threshold,
        horizon_s,
    })
}

/// `set,trajectory,step,t,position_error` rows for every rollout step.
pub fn rollout_error_csv(name: &str, errors: &[Vec<f64>], trajs: &[Trajectory]) -> String {
    let mut out = String::from("set,trajectory,step,t,position_error\n");
    for (i, (e, t)) in errors.iter().zip(trajs).enumerate() {
        for (k, v) in e.iter().enumerate() {
            let _ = writeln!(out, "{name},{i},{},{},{v}", k + 1, (k + 1) as f64 * t.period);
        }
    }
    out
}

/// Ground truth next to the rollout prediction, one row per stored state.
pub fn prediction_csv<P: Predictor + ?Sized>(pred: &P, trajs: &[Trajectory]) -> String {
    const COLS: [&str; 9] = ["x", "y", "z", "cos_psi", "sin_psi", "u", "v", "w", "r"];
    let mut out = String::from("trajectory,step,t");
    for prefix in ["true", "pred"] {
        for c in COLS {
            let _ = write!(out, ",{prefix}_{c}");
        }
    }
    out.push('\n');
    let preds = rollout_predictions(pred, trajs);
    for (i, (p, t)) in preds.iter().zip(trajs).enumerate() {
        for (k, x) in t.states.iter().enumerate() {
            let truth = to_net_state(x);
            let guess = if k == 0 { truth } else { p[k - 1] };
            let _ = write!(out, "{i},{k},{}", k as f64 * t.period);
            for v in truth.to_array().iter().chain(guess.to_array().iter()) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_eval_sets, generate_dataset, GenerationConfig};
    use crate::dynamics::ControlInput;
    use crate::losses::FlowPredictor;
    use approx::assert_abs_diff_eq;

    fn oracle() -> FlowPredictor {
        FlowPredictor { physical: PhysicalParams::default(), substeps: 10 }
    }

    fn dev(n: usize) -> Dataset {
        generate_dataset(&GenerationConfig::evaluation("dev", n, 0.08, 1)).unwrap()
    }

    /// Oracle shifted in x by `ramp * step`, where the step is inferred from
    /// the control sequence of the trajectory.
    struct Drift {
        traj: Trajectory,
        per_step: f64,
    }

    impl Predictor for Drift {
        fn predict(
            &self,
            points: &[(NetState, ControlInput, f64)],
            _rates: bool,
        ) -> Result<Vec<(NetState, NetState)>> {
            Ok(points
                .iter()
                .map(|(_, u, _)| {
                    let k = self.traj.controls.iter().position(|c| c == u).expect("known control") + 1;
                    let mut next = to_net_state(&self.traj.states[k]);
                    next.x += self.per_step * k as f64;
                    (next, NetState::default())
                })
                .collect())
        }
    }

    #[test]
    fn oracle_vpt_is_full_horizon() {
        let d = dev(3);
        let stats = vpt_suite(&oracle(), &d, VPT_THRESHOLD);
        for v in &stats.per_traj {
            assert_eq!(*v, 65.0 * 0.08);
        }
        assert_eq!(stats.std_s, 0.0);
    }

    #[test]
    fn ramp_stub_crosses_between_steps_12_and_13() {
        let d = dev(1);
        // error 0.004 k: 0.048 at step 12, 0.052 at step 13
        let stub = Drift { traj: d.trajectories[0].clone(), per_step: 0.004 };
        assert_abs_diff_eq!(vpt(&stub, &d.trajectories[0], VPT_THRESHOLD), 12.0 * 0.08, epsilon = 1e-15);
        let stub = Drift { traj: d.trajectories[0].clone(), per_step: 0.06 };
        assert_eq!(vpt(&stub, &d.trajectories[0], VPT_THRESHOLD), 0.0);
    }

    #[test]
    fn vpt_prefix_and_monotonicity() {
        let errors = [0.01, 0.02, 0.06, 0.01, 0.03];
        assert_abs_diff_eq!(vpt_from_errors(&errors, 0.1, 0.05), 0.2, epsilon = 1e-15);
        let mut last = 0.0;
        for th in [0.0, 0.015, 0.025, 0.05, 0.07] {
            let v = vpt_from_errors(&errors, 0.1, th);
            assert!(v >= last);
            last = v;
        }
        assert_abs_diff_eq!(last, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn stats_aggregate() {
        let s = VptStats::from_values(vec![0.0, 5.2, 0.0, 5.2]);
        assert_abs_diff_eq!(s.mean_s, 2.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std_s, 2.6, epsilon = 1e-15);
    }

    #[test]
    fn oracle_report_hits_floors() {
        let sets = build_eval_sets(2, [1, 2, 3]).unwrap();
        let r = full_report(&oracle(), &sets, &PhysicalParams::default(), VPT_THRESHOLD, serde_json::json!({}))
            .unwrap();
        assert_eq!([r.l1, r.l2, r.l3, r.l4, r.l5], [-12.0; 5]);
        assert_eq!(r.vpt1.mean_s, 5.2);
        assert_abs_diff_eq!(r.vpt2.mean_s, 65.0 * 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(r.vpt3.mean_s, 65.0 * 0.10, epsilon = 1e-12);
        assert_eq!(r.horizon_s, 5.2);
        let json = serde_json::to_string(&r).unwrap();
        for key in ["\"L1\"", "\"L5\"", "\"VPT1\"", "\"VPT3\"", "\"threshold_m\"", "\"horizon_s\""] {
            assert!(json.contains(key));
        }
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_shapes() {
        let d = dev(2);
        let errors = rollout_position_errors(&oracle(), &d.trajectories);
        let csv = rollout_error_csv("dev", &errors, &d.trajectories);
        assert_eq!(csv.lines().count(), 1 + 2 * 65);
        let csv = prediction_csv(&oracle(), &d.trajectories);
        assert_eq!(csv.lines().count(), 1 + 2 * 66);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 3 + 18);
    }
}
