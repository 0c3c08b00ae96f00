//! Training losses over batches of trajectories.
//!
//! Every loss is a mean of squared 9-component errors (yaw enters as its
//! `(cos, sin)` pair). Values can be computed for any [`Predictor`]; exact
//! parameter gradients are available for the network through
//! [`loss_gradient`].
//!
//! Index conventions, per trajectory with `N_D` stored states:
//! - `N_D - 1` points carry a control and an interval; these are the points
//!   of the data, physics and initial-condition losses.
//! - rollouts start at the first `N_R = N_D - N_pred` points and run for
//!   `N_pred` steps, fully autoregressive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, evaluate, Evaluation, GradientVector};
use crate::datagen::Trajectory;
use crate::dynamics::{
    from_net_state, integrate_step, lifted_derivative, lifted_jacobian, to_net_state, ControlInput, NetState,
    PhysicalParams, NET_DIM,
};
use crate::error::{PincError, Result};
use crate::model::{input_rows, renormalize_yaw, ModelParams, INPUT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "data")]
    Data,
    #[serde(rename = "phy", alias = "physics")]
    Physics,
    #[serde(rename = "ic")]
    InitialCondition,
    #[serde(rename = "roll", alias = "rollout")]
    Rollout,
    #[serde(rename = "phy_roll", alias = "physics_rollout")]
    PhysicsRollout,
}

impl LossKind {
    pub const ALL: [LossKind; 5] =
        [LossKind::Data, LossKind::Physics, LossKind::InitialCondition, LossKind::Rollout, LossKind::PhysicsRollout];

    /// Short name used in configs and metric columns.
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Data => "data",
            LossKind::Physics => "phy",
            LossKind::InitialCondition => "ic",
            LossKind::Rollout => "roll",
            LossKind::PhysicsRollout => "phy_roll",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = PincError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "data" => Ok(LossKind::Data),
            "phy" | "physics" => Ok(LossKind::Physics),
            "ic" => Ok(LossKind::InitialCondition),
            "roll" | "rollout" => Ok(LossKind::Rollout),
            "phy_roll" | "phyroll" | "physics_rollout" => Ok(LossKind::PhysicsRollout),
            other => Err(PincError::config("losses", format!("unknown loss `{other}`"))),
        }
    }
}

/// Parses a comma-separated loss list such as `data,phy`.
pub fn parse_loss_list(text: &str) -> Result<Vec<LossKind>> {
    let mut out: Vec<LossKind> = Vec::new();
    for item in text.split(',').filter(|s| !s.trim().is_empty()) {
        let kind: LossKind = item.parse()?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        return Err(PincError::config("losses", "at least one loss must be active"));
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_data: f64,
    pub w_roll: f64,
    pub w_phy: f64,
    pub w_phy_roll: f64,
    pub w_ic: f64,
    /// Rollout horizon in steps.
    pub n_pred: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_data: 1.0, w_roll: 1.0, w_phy: 0.5, w_phy_roll: 0.5, w_ic: 0.5, n_pred: 10 }
    }
}

impl LossWeights {
    pub fn weight(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Data => self.w_data,
            LossKind::Physics => self.w_phy,
            LossKind::InitialCondition => self.w_ic,
            LossKind::Rollout => self.w_roll,
            LossKind::PhysicsRollout => self.w_phy_roll,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for kind in LossKind::ALL {
            let w = self.weight(kind);
            if !(w.is_finite() && w >= 0.0) {
                return Err(PincError::config(format!("w_{kind}"), "weights must be finite and non-negative"));
            }
        }
        if self.n_pred == 0 {
            return Err(PincError::config("n_pred", "rollout horizon must be at least 1"));
        }
        Ok(())
    }
}

/// One trajectory as seen by the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTrajectory {
    pub period: f64,
    /// States fed to the network (possibly noisy).
    pub inputs: Vec<NetState>,
    /// Clean ground-truth states.
    pub targets: Vec<NetState>,
    pub controls: Vec<ControlInput>,
    /// Collocation times per interval.
    pub colloc: Vec<Vec<f64>>,
}

impl BatchTrajectory {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let targets: Vec<NetState> = traj.states.iter().map(to_net_state).collect();
        BatchTrajectory {
            period: traj.period,
            inputs: targets.clone(),
            targets,
            controls: traj.controls.clone(),
            colloc: traj.colloc.clone(),
        }
    }

    /// Number of stored states, `N_D`.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.targets.len();
        if n < 2 {
            return Err(PincError::InvalidBatch("trajectories need at least two states".into()));
        }
        if self.inputs.len() != n || self.controls.len() != n - 1 || self.colloc.len() != n - 1 {
            return Err(PincError::InvalidBatch(format!(
                "inconsistent lengths: {} targets, {} inputs, {} controls, {} collocation rows",
                n,
                self.inputs.len(),
                self.controls.len(),
                self.colloc.len()
            )));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(PincError::InvalidBatch("sampling period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub trajectories: Vec<BatchTrajectory>,
}

impl Batch {
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        Batch { trajectories: trajs.into_iter().map(BatchTrajectory::from_trajectory).collect() }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(PincError::InvalidBatch("empty batch".into()));
        }
        self.trajectories.iter().try_for_each(BatchTrajectory::validate)
    }

    fn check_horizon(&self, n_pred: usize) -> Result<()> {
        if n_pred == 0 {
            return Err(PincError::InvalidBatch("rollout horizon must be at least 1".into()));
        }
        match self.trajectories.iter().find(|t| t.len() <= n_pred) {
            Some(t) => Err(PincError::InvalidBatch(format!(
                "rollout horizon {n_pred} needs more than {n_pred} states, got {}",
                t.len()
            ))),
            None => Ok(()),
        }
    }
}

/// Anything that maps `(initial state, control, t)` to a predicted state and
/// its time derivative.
pub trait Predictor {
    /// Rates may be left at zero when `rates` is false.
    fn predict(&self, points: &[(NetState, ControlInput, f64)], rates: bool) -> Result<Vec<(NetState, NetState)>>;

    /// Whether rollouts project the yaw pair back onto the unit circle.
    fn renormalizes_yaw(&self) -> bool {
        false
    }
}

impl Predictor for ModelParams {
    fn predict(&self, points: &[(NetState, ControlInput, f64)], rates: bool) -> Result<Vec<(NetState, NetState)>> {
        let ev = evaluate(self, input_rows(points.iter().copied()), rates)?;
        Ok((0..points.len()).map(|i| (ev.prediction(i), ev.rate(i))).collect())
    }

    fn renormalizes_yaw(&self) -> bool {
        self.config.renormalize_yaw_on_rollout
    }
}

/// Ground-truth predictor: integrates the vehicle model from the given
/// state. Its rates are the model right-hand side at the predicted state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPredictor {
    pub physical: PhysicalParams,
    pub substeps: usize,
}

impl Predictor for FlowPredictor {
    fn predict(&self, points: &[(NetState, ControlInput, f64)], rates: bool) -> Result<Vec<(NetState, NetState)>> {
        points
            .iter()
            .map(|(s, u, t)| {
                let x0 = from_net_state(s)?;
                let x = if *t > 0.0 { integrate_step(&x0, u, &self.physical, *t, self.substeps)? } else { x0 };
                let ns = to_net_state(&x);
                let rate = if rates { lifted_derivative(&ns, u, &self.physical) } else { NetState::default() };
                Ok((ns, rate))
            })
            .collect()
    }
}

fn sq_err(a: &NetState, b: &NetState) -> f64 {
    a.squared_distance(b)
}

fn residual(pred: &NetState, rate: &NetState, u: &ControlInput, phys: &PhysicalParams) -> [f64; NET_DIM] {
    let f = lifted_derivative(pred, u, phys).to_array();
    let mut r = rate.to_array();
    for (ri, fi) in r.iter_mut().zip(f) {
        *ri -= fi;
    }
    r
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean squared one-step error over all consecutive pairs.
pub fn data_loss<P: Predictor + ?Sized>(pred: &P, batch: &Batch) -> Result<f64> {
    batch.validate()?;
    let mut points = Vec::new();
    let mut targets = Vec::new();
    for tr in &batch.trajectories {
        for n in 0..tr.len() - 1 {
            points.push((tr.inputs[n], tr.controls[n], tr.period));
            targets.push(tr.targets[n + 1]);
        }
    }
    let out = pred.predict(&points, false)?;
    Ok(mean(out.iter().zip(&targets).map(|((p, _), t)| sq_err(p, t)).sum(), points.len()))
}

/// Mean squared ODE residual `dx_hat/dt - f(x_hat, u)` over all collocation
/// points.
pub fn physics_loss<P: Predictor + ?Sized>(pred: &P, batch: &Batch, phys: &PhysicalParams) -> Result<f64> {
    batch.validate()?;
    let mut points = Vec::new();
    for tr in &batch.trajectories {
        for n in 0..tr.len() - 1 {
            for &tau in &tr.colloc[n] {
                points.push((tr.inputs[n], tr.controls[n], tau));
            }
        }
    }
    let out = pred.predict(&points, true)?;
    let sum = out
        .iter()
        .zip(&points)
        .map(|((p, rate), (_, u, _))| residual(p, rate, u, phys).iter().map(|r| r * r).sum::<f64>())
        .sum();
    Ok(mean(sum, points.len()))
}

/// Mean squared error between each input state and the prediction at `t = 0`.
pub fn ic_loss<P: Predictor + ?Sized>(pred: &P, batch: &Batch) -> Result<f64> {
    batch.validate()?;
    let mut points = Vec::new();
    let mut targets = Vec::new();
    for tr in &batch.trajectories {
        for n in 0..tr.len() - 1 {
            points.push((tr.inputs[n], tr.controls[n], 0.0));
            targets.push(tr.targets[n]);
        }
    }
    let out = pred.predict(&points, false)?;
    Ok(mean(out.iter().zip(&targets).map(|((p, _), t)| sq_err(p, t)).sum(), points.len()))
}

/// `(trajectory, start)` for every rollout in the batch.
fn chains(batch: &Batch, n_pred: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (m, tr) in batch.trajectories.iter().enumerate() {
        for n in 0..tr.len() - n_pred {
            out.push((m, n));
        }
    }
    out
}

/// States `s_0..=s_steps` of every chain; `s_0` is the input state.
fn rollout_states<P: Predictor + ?Sized>(
    pred: &P,
    batch: &Batch,
    chains: &[(usize, usize)],
    steps: usize,
) -> Result<Vec<Vec<NetState>>> {
    let mut states = vec![chains.iter().map(|&(m, n)| batch.trajectories[m].inputs[n]).collect::<Vec<_>>()];
    for k in 1..=steps {
        let prev = &states[k - 1];
        let points: Vec<_> = chains
            .iter()
            .zip(prev)
            .map(|(&(m, n), s)| {
                let tr = &batch.trajectories[m];
                (*s, tr.controls[n + k - 1], tr.period)
            })
            .collect();
        let mut next: Vec<NetState> = pred.predict(&points, false)?.into_iter().map(|(p, _)| p).collect();
        if pred.renormalizes_yaw() {
            next.iter_mut().for_each(renormalize_yaw);
        }
        states.push(next);
    }
    Ok(states)
}

/// Mean squared error of autoregressive predictions over `1..=n_pred` steps.
pub fn rollout_loss<P: Predictor + ?Sized>(pred: &P, batch: &Batch, n_pred: usize) -> Result<f64> {
    batch.validate()?;
    batch.check_horizon(n_pred)?;
    let chains = chains(batch, n_pred);
    let states = rollout_states(pred, batch, &chains, n_pred)?;
    let mut sum = 0.0;
    for (k, step) in states.iter().enumerate().skip(1) {
        for (s, &(m, n)) in step.iter().zip(&chains) {
            sum += sq_err(s, &batch.trajectories[m].targets[n + k]);
        }
    }
    Ok(mean(sum, chains.len() * n_pred))
}

/// Physics residual at the collocation times of each interval along every
/// rollout, with the rollout state at the start of the interval as the
/// initial condition. States `j = 0..n_pred` are used.
pub fn physics_rollout_loss<P: Predictor + ?Sized>(
    pred: &P,
    batch: &Batch,
    n_pred: usize,
    phys: &PhysicalParams,
) -> Result<f64> {
    batch.validate()?;
    batch.check_horizon(n_pred)?;
    let chains = chains(batch, n_pred);
    let states = rollout_states(pred, batch, &chains, n_pred - 1)?;
    let points = physics_rollout_points(batch, &chains, &states);
    let out = pred.predict(&points, true)?;
    let sum = out
        .iter()
        .zip(&points)
        .map(|((p, rate), (_, u, _))| residual(p, rate, u, phys).iter().map(|r| r * r).sum::<f64>())
        .sum();
    Ok(mean(sum, points.len()))
}

/// Collocation points along rollouts in `(step, chain, k)` order.
fn physics_rollout_points(
    batch: &Batch,
    chains: &[(usize, usize)],
    states: &[Vec<NetState>],
) -> Vec<(NetState, ControlInput, f64)> {
    let mut points = Vec::new();
    for (j, step) in states.iter().enumerate() {
        for (s, &(m, n)) in step.iter().zip(chains) {
            let tr = &batch.trajectories[m];
            for &tau in &tr.colloc[n + j] {
                points.push((*s, tr.controls[n + j], tau));
            }
        }
    }
    points
}

/// Value of one loss for any predictor.
pub fn loss_value<P: Predictor + ?Sized>(
    pred: &P,
    batch: &Batch,
    kind: LossKind,
    n_pred: usize,
    phys: &PhysicalParams,
) -> Result<f64> {
    match kind {
        LossKind::Data => data_loss(pred, batch),
        LossKind::Physics => physics_loss(pred, batch, phys),
        LossKind::InitialCondition => ic_loss(pred, batch),
        LossKind::Rollout => rollout_loss(pred, batch, n_pred),
        LossKind::PhysicsRollout => physics_rollout_loss(pred, batch, n_pred, phys),
    }
}

// ----- gradients ------------------------------------------------------------------

/// Recorded network rollout for back-propagation through time.
struct RolloutTape {
    /// `evals[k - 1]` produced step `k` for every chain.
    evals: Vec<Evaluation>,
    /// Predictions before yaw renormalization, `raw[k - 1][chain]`.
    raw: Vec<Vec<NetState>>,
    /// `states[k][chain]`, `k = 0..=steps`.
    states: Vec<Vec<NetState>>,
}

fn record_rollout(params: &ModelParams, batch: &Batch, chains: &[(usize, usize)], steps: usize) -> Result<RolloutTape> {
    let mut states = vec![chains.iter().map(|&(m, n)| batch.trajectories[m].inputs[n]).collect::<Vec<_>>()];
    let mut evals = Vec::with_capacity(steps);
    let mut raw = Vec::with_capacity(steps);
    for k in 1..=steps {
        let rows = input_rows(chains.iter().zip(&states[k - 1]).map(|(&(m, n), s)| {
            let tr = &batch.trajectories[m];
            (*s, tr.controls[n + k - 1], tr.period)
        }));
        let ev = evaluate(params, rows, false)?;
        let pre: Vec<NetState> = (0..chains.len()).map(|i| ev.prediction(i)).collect();
        let mut next = pre.clone();
        if params.config.renormalize_yaw_on_rollout {
            next.iter_mut().for_each(renormalize_yaw);
        }
        evals.push(ev);
        raw.push(pre);
        states.push(next);
    }
    Ok(RolloutTape { evals, raw, states })
}

/// Propagates state adjoints `bars[k][chain]` back to the parameters.
fn backprop_rollout(params: &ModelParams, tape: &RolloutTape, mut bars: Vec<Vec<[f64; NET_DIM]>>, grad: &mut [f64]) {
    for k in (1..tape.states.len()).rev() {
        let mut flat = Vec::with_capacity(bars[k].len() * NET_DIM);
        for (bar, pre) in bars[k].iter().zip(&tape.raw[k - 1]) {
            let mut b = *bar;
            if params.config.renormalize_yaw_on_rollout {
                let rho = pre.cos_psi.hypot(pre.sin_psi);
                if rho > 0.0 {
                    let (c, s) = (pre.cos_psi / rho, pre.sin_psi / rho);
                    let proj = c * b[3] + s * b[4];
                    b[3] = (b[3] - c * proj) / rho;
                    b[4] = (b[4] - s * proj) / rho;
                }
            }
            flat.extend_from_slice(&b);
        }
        let input_bar = backward(params, &tape.evals[k - 1], &flat, None, grad);
        for (i, prev) in bars[k - 1].iter_mut().enumerate() {
            for (p, x) in prev.iter_mut().zip(&input_bar[i * INPUT_DIM..i * INPUT_DIM + NET_DIM]) {
                *p += x;
            }
        }
    }
}

/// Squared-error adjoints `2 (pred - target) / count` for a flat prediction
/// buffer; returns the loss sum.
fn squared_error_bar(ev: &Evaluation, targets: &[NetState], count: usize, bar: &mut Vec<f64>) -> f64 {
    let mut sum = 0.0;
    bar.clear();
    for (i, t) in targets.iter().enumerate() {
        let p = ev.prediction(i).to_array();
        for (pi, ti) in p.iter().zip(t.to_array()) {
            let e = pi - ti;
            sum += e * e;
            bar.push(2.0 * e / count as f64);
        }
    }
    sum
}

/// Physics residual adjoints for a traced evaluation: fills the value and
/// rate adjoints and returns the residual sum of squares.
fn physics_bars(
    ev: &Evaluation,
    controls: &[ControlInput],
    phys: &PhysicalParams,
    count: usize,
    pred_bar: &mut Vec<f64>,
    rate_bar: &mut Vec<f64>,
) -> f64 {
    let mut sum = 0.0;
    pred_bar.clear();
    rate_bar.clear();
    let scale = 2.0 / count as f64;
    for (i, u) in controls.iter().enumerate() {
        let p = ev.prediction(i);
        let r = residual(&p, &ev.rate(i), u, phys);
        sum += r.iter().map(|x| x * x).sum::<f64>();
        let jac = lifted_jacobian(&p, phys);
        let fb: Vec<f64> = r.iter().map(|x| scale * x).collect();
        rate_bar.extend_from_slice(&fb);
        for k in 0..NET_DIM {
            pred_bar.push(-(0..NET_DIM).map(|i| jac[i][k] * fb[i]).sum::<f64>());
        }
    }
    sum
}

/// Value and exact parameter gradient of one loss for the network.
pub fn loss_gradient(
    params: &ModelParams,
    batch: &Batch,
    kind: LossKind,
    n_pred: usize,
    phys: &PhysicalParams,
) -> Result<(f64, GradientVector)> {
    batch.validate()?;
    let mut grad = vec![0.0; params.len()];
    let mut bar = Vec::new();
    let value = match kind {
        LossKind::Data | LossKind::InitialCondition => {
            let (t_offset, at_period) = if kind == LossKind::Data { (1, true) } else { (0, false) };
            let mut points = Vec::new();
            let mut targets = Vec::new();
            for tr in &batch.trajectories {
                for n in 0..tr.len() - 1 {
                    points.push((tr.inputs[n], tr.controls[n], if at_period { tr.period } else { 0.0 }));
                    targets.push(tr.targets[n + t_offset]);
                }
            }
            let ev = evaluate(params, input_rows(points), false)?;
            let sum = squared_error_bar(&ev, &targets, targets.len(), &mut bar);
            backward(params, &ev, &bar, None, &mut grad);
            mean(sum, targets.len())
        }
        LossKind::Physics => {
            let mut points = Vec::new();
            for tr in &batch.trajectories {
                for n in 0..tr.len() - 1 {
                    for &tau in &tr.colloc[n] {
                        points.push((tr.inputs[n], tr.controls[n], tau));
                    }
                }
            }
            let controls: Vec<ControlInput> = points.iter().map(|p| p.1).collect();
            let ev = evaluate(params, input_rows(points), true)?;
            let mut rate_bar = Vec::new();
            let sum = physics_bars(&ev, &controls, phys, controls.len(), &mut bar, &mut rate_bar);
            backward(params, &ev, &bar, Some(&rate_bar), &mut grad);
            mean(sum, controls.len())
        }
        LossKind::Rollout => {
            batch.check_horizon(n_pred)?;
            let chains = chains(batch, n_pred);
            let tape = record_rollout(params, batch, &chains, n_pred)?;
            let count = chains.len() * n_pred;
            let mut sum = 0.0;
            let mut bars = vec![vec![[0.0; NET_DIM]; chains.len()]; n_pred + 1];
            for k in 1..=n_pred {
                for (i, &(m, n)) in chains.iter().enumerate() {
                    let s = tape.states[k][i].to_array();
                    let t = batch.trajectories[m].targets[n + k].to_array();
                    for c in 0..NET_DIM {
                        let e = s[c] - t[c];
                        sum += e * e;
                        bars[k][i][c] = 2.0 * e / count as f64;
                    }
                }
            }
            backprop_rollout(params, &tape, bars, &mut grad);
            mean(sum, count)
        }
        LossKind::PhysicsRollout => {
            batch.check_horizon(n_pred)?;
            let chains = chains(batch, n_pred);
            let tape = record_rollout(params, batch, &chains, n_pred - 1)?;
            let points = physics_rollout_points(batch, &chains, &tape.states);
            let controls: Vec<ControlInput> = points.iter().map(|p| p.1).collect();
            let ev = evaluate(params, input_rows(points), true)?;
            let mut rate_bar = Vec::new();
            let sum = physics_bars(&ev, &controls, phys, controls.len(), &mut bar, &mut rate_bar);
            let input_bar = backward(params, &ev, &bar, Some(&rate_bar), &mut grad);
            // scatter the state adjoints back onto the rollout states, in
            // the same (step, chain, k) order the points were built
            let mut bars = vec![vec![[0.0; NET_DIM]; chains.len()]; n_pred];
            let mut row = 0;
            for (j, step_bars) in bars.iter_mut().enumerate() {
                for (i, &(m, n)) in chains.iter().enumerate() {
                    for _ in &batch.trajectories[m].colloc[n + j] {
                        for (b, x) in step_bars[i].iter_mut().zip(&input_bar[row * INPUT_DIM..row * INPUT_DIM + NET_DIM]) {
                            *b += x;
                        }
                        row += 1;
                    }
                }
            }
            backprop_rollout(params, &tape, bars, &mut grad);
            mean(sum, controls.len())
        }
    };
    if !value.is_finite() {
        return Err(PincError::NonFiniteLoss { loss: kind.name(), what: "value" });
    }
    let grad = GradientVector(grad);
    if !grad.is_finite() {
        return Err(PincError::NonFiniteLoss { loss: kind.name(), what: "gradient" });
    }
    Ok((value, grad))
}
