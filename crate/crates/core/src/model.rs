//! The PINC network: `[x(0), u(0), t] -> x(t)` as a residual MLP with
//! per-layer adaptive activations, layer normalization on every second
//! hidden layer and a body-to-world rotation of the planar increments.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{evaluate, Evaluation};
use crate::dynamics::{ControlInput, NetState, NET_DIM};
use crate::error::{PincError, Result};

/// Network input width: 9 state components, 4 controls, time.
pub const INPUT_DIM: usize = NET_DIM + 4 + 1;
/// Column of the time input.
pub const TIME_INPUT: usize = INPUT_DIM - 1;
pub const OUTPUT_DIM: usize = NET_DIM;
/// Version tag of the flat parameter ordering stored in checkpoints.
pub const ORDERING_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[serde(alias = "tanh")]
    AdaptiveTanh,
    #[serde(alias = "softplus")]
    AdaptiveSoftplus,
}

impl std::str::FromStr for Activation {
    type Err = PincError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" | "adaptive_tanh" => Ok(Activation::AdaptiveTanh),
            "softplus" | "adaptive_softplus" => Ok(Activation::AdaptiveSoftplus),
            other => Err(PincError::config("activation", format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub layer_norm_every_2nd: bool,
    pub residual_connection: bool,
    pub rotate_planar_increments: bool,
    pub renormalize_yaw_on_rollout: bool,
    /// Start from a zero output layer, so the untrained network predicts
    /// "no change" when the residual connection is on.
    pub zero_output_init: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_layers: 4,
            hidden_width: 32,
            activation: Activation::AdaptiveSoftplus,
            layer_norm_every_2nd: true,
            residual_connection: true,
            rotate_planar_increments: true,
            renormalize_yaw_on_rollout: false,
            zero_output_init: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 {
            return Err(PincError::config("hidden_layers", "must be >= 1"));
        }
        if self.hidden_width == 0 {
            return Err(PincError::config("hidden_width", "must be >= 1"));
        }
        Ok(())
    }

    /// Hidden layer `index` (0-based) is normalized when it is an even layer
    /// in 1-based counting.
    pub fn is_normalized(&self, index: usize) -> bool {
        self.layer_norm_every_2nd && index % 2 == 1
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: usize,
    pub bias: usize,
    pub beta: Option<usize>,
    /// `(gain, offset)` vectors of the layer norm.
    pub norm: Option<(usize, usize)>,
}

/// Canonical ordering: hidden layers in order, each contributing its weight
/// matrix (row-major, `out x in`), bias, `beta`, then layer-norm gain and
/// offset; the output layer contributes weight and bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub hidden: Vec<LayerLayout>,
    pub output: LayerLayout,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut cursor = 0;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let mut hidden = Vec::with_capacity(config.hidden_layers);
        let mut in_dim = INPUT_DIM;
        for l in 0..config.hidden_layers {
            let out_dim = config.hidden_width;
            let weight = take(out_dim * in_dim);
            let bias = take(out_dim);
            let beta = Some(take(1));
            let norm = config.is_normalized(l).then(|| (take(out_dim), take(out_dim)));
            hidden.push(LayerLayout { in_dim, out_dim, weight, bias, beta, norm });
            in_dim = out_dim;
        }
        let weight = take(OUTPUT_DIM * in_dim);
        let bias = take(OUTPUT_DIM);
        let output = LayerLayout { in_dim, out_dim: OUTPUT_DIM, weight, bias, beta: None, norm: None };
        ParamLayout { hidden, output, len: cursor }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, `beta = 1`, unit layer-norm gain.
    /// With `zero_output_init` the output layer weights are zeroed after
    /// drawing, leaving the hidden layers identical to the default init.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut values = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in layout.hidden.iter().chain(std::iter::once(&layout.output)) {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut values[layer.weight..layer.weight + layer.in_dim * layer.out_dim] {
                *w = rng.random_range(-limit..limit);
            }
            if let Some(b) = layer.beta {
                values[b] = 1.0;
            }
            if let Some((gain, _)) = layer.norm {
                values[gain..gain + layer.out_dim].fill(1.0);
            }
        }
        let mut params = ModelParams { config: *config, layout, values };
        if config.zero_output_init {
            params.zero_output_layer();
        }
        Ok(params)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.layout.hidden.iter().filter_map(|l| l.beta).map(|b| self.values[b]).collect()
    }

    /// Zeroes the output layer so the raw increment is identically zero.
    pub fn zero_output_layer(&mut self) {
        let out = self.layout.output;
        self.values[out.weight..out.bias + out.out_dim].fill(0.0);
    }

    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let out = self.layout.output;
        let (head, bias) = self.values.split_at_mut(out.bias);
        (&mut head[out.weight..out.weight + out.out_dim * out.in_dim], &mut bias[..out.out_dim])
    }
}

/// Adaptive activation `phi(beta * x)`; softplus is rescaled by `1 / beta`.
pub fn activation(x: f64, beta: f64, kind: Activation) -> f64 {
    activation_terms(x, beta, kind).value
}

/// Value and the partial derivatives needed for a twice-differentiated pass.
#[derive(Debug, Clone, Copy)]
pub struct ActivationTerms {
    pub value: f64,
    /// d/dx
    pub dx: f64,
    /// d2/dx2
    pub dxx: f64,
    /// d/dbeta
    pub dbeta: f64,
    /// d2/(dx dbeta)
    pub dxbeta: f64,
}

#[inline]
pub fn activation_terms(x: f64, beta: f64, kind: Activation) -> ActivationTerms {
    match kind {
        Activation::AdaptiveTanh => {
            let t = (beta * x).tanh();
            let sech2 = 1.0 - t * t;
            ActivationTerms {
                value: t,
                dx: beta * sech2,
                dxx: -2.0 * beta * beta * t * sech2,
                dbeta: x * sech2,
                dxbeta: sech2 * (1.0 - 2.0 * beta * x * t),
            }
        }
        Activation::AdaptiveSoftplus => {
            let z = beta * x;
            let sp = z.max(0.0) + (-z.abs()).exp().ln_1p();
            let sig = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            let dsig = sig * (1.0 - sig);
            ActivationTerms {
                value: sp / beta,
                dx: sig,
                dxx: beta * dsig,
                dbeta: x * sig / beta - sp / (beta * beta),
                dxbeta: x * dsig,
            }
        }
    }
}

/// Packs network rows `[state, control, t]`.
pub fn input_rows(points: impl IntoIterator<Item = (NetState, ControlInput, f64)>) -> Vec<f64> {
    let mut rows = Vec::new();
    for (s, u, t) in points {
        rows.extend_from_slice(&s.to_array());
        rows.extend_from_slice(&u.to_array());
        rows.push(t);
    }
    rows
}

pub fn forward(params: &ModelParams, ns0: &NetState, u0: &ControlInput, t: f64) -> Result<NetState> {
    let ev = evaluate(params, input_rows([(*ns0, *u0, t)]), false)?;
    Ok(ev.prediction(0))
}

/// One-step prediction: the network evaluated at `t = period`.
pub fn predict_step(params: &ModelParams, ns: &NetState, u: &ControlInput, period: f64) -> Result<NetState> {
    forward(params, ns, u, period)
}

/// Restores unit norm of the `(cos, sin)` pair.
pub fn renormalize_yaw(ns: &mut NetState) {
    let rho = ns.cos_psi.hypot(ns.sin_psi);
    if rho > 0.0 {
        ns.cos_psi /= rho;
        ns.sin_psi /= rho;
    }
}

/// Autoregressive rollout; returns the `controls.len()` predicted states
/// after `s0` (the initial state itself is not included).
pub fn rollout(params: &ModelParams, s0: &NetState, controls: &[ControlInput], period: f64) -> Result<Vec<NetState>> {
    let mut out = Vec::with_capacity(controls.len());
    let mut state = *s0;
    for (k, u) in controls.iter().enumerate() {
        state = predict_step(params, &state, u, period).map_err(|_| PincError::RolloutDiverged { step: k + 1 })?;
        if !state.is_finite() {
            return Err(PincError::RolloutDiverged { step: k + 1 });
        }
        if params.config.renormalize_yaw_on_rollout {
            renormalize_yaw(&mut state);
        }
        out.push(state);
    }
    Ok(out)
}

/// Batched rollout of many initial states at once; `controls[i]` drives
/// rollout `i`, and all sequences must have the same length.
pub fn rollout_many(
    params: &ModelParams,
    starts: &[NetState],
    controls: &[&[ControlInput]],
    period: f64,
) -> Result<Vec<Vec<NetState>>> {
    let steps = controls.first().map_or(0, |c| c.len());
    let mut states = starts.to_vec();
    let mut out = vec![Vec::with_capacity(steps); starts.len()];
    for k in 0..steps {
        let rows = input_rows(states.iter().zip(controls).map(|(s, c)| (*s, c[k], period)));
        let ev: Evaluation =
            evaluate(params, rows, false).map_err(|_| PincError::RolloutDiverged { step: k + 1 })?;
        for (i, state) in states.iter_mut().enumerate() {
            *state = ev.prediction(i);
            if params.config.renormalize_yaw_on_rollout {
                renormalize_yaw(state);
            }
            out[i].push(*state);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_gain: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_offset: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub ordering_version: u32,
    pub config: ModelConfig,
    pub hidden: Vec<LayerRecord>,
    pub output: LayerRecord,
}

const CHECKPOINT_FORMAT: &str = "pinc-checkpoint";

impl ModelParams {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let record = |l: &LayerLayout| LayerRecord {
            weight: self.values[l.weight..l.weight + l.in_dim * l.out_dim].to_vec(),
            bias: self.values[l.bias..l.bias + l.out_dim].to_vec(),
            beta: l.beta.map(|b| self.values[b]),
            norm_gain: l.norm.map(|(g, _)| self.values[g..g + l.out_dim].to_vec()),
            norm_offset: l.norm.map(|(_, o)| self.values[o..o + l.out_dim].to_vec()),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            ordering_version: ORDERING_VERSION,
            config: self.config,
            hidden: self.layout.hidden.iter().map(record).collect(),
            output: record(&self.layout.output),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shape = |msg: String| PincError::CheckpointShape(msg);
        if ck.format != CHECKPOINT_FORMAT {
            return Err(shape(format!("unknown format `{}`", ck.format)));
        }
        if ck.ordering_version != ORDERING_VERSION {
            return Err(shape(format!("unsupported ordering version {}", ck.ordering_version)));
        }
        ck.config.validate()?;
        let layout = ParamLayout::new(&ck.config);
        if ck.hidden.len() != layout.hidden.len() {
            return Err(shape(format!(
                "config has {} hidden layers, checkpoint stores {}",
                layout.hidden.len(),
                ck.hidden.len()
            )));
        }
        let mut values = vec![0.0; layout.len];
        let layers = layout.hidden.iter().zip(&ck.hidden).chain(std::iter::once((&layout.output, &ck.output)));
        for (i, (l, rec)) in layers.enumerate() {
            let mut put = |at: usize, data: &[f64], n: usize, what: &str| -> Result<()> {
                if data.len() != n {
                    return Err(shape(format!("layer {i} {what}: expected {n} values, found {}", data.len())));
                }
                values[at..at + n].copy_from_slice(data);
                Ok(())
            };
            put(l.weight, &rec.weight, l.in_dim * l.out_dim, "weight")?;
            put(l.bias, &rec.bias, l.out_dim, "bias")?;
            match (l.beta, rec.beta) {
                (Some(at), Some(b)) => put(at, &[b], 1, "beta")?,
                (None, None) => {}
                _ => return Err(shape(format!("layer {i}: beta presence mismatch"))),
            }
            match (l.norm, &rec.norm_gain, &rec.norm_offset) {
                (Some((g, o)), Some(gain), Some(off)) => {
                    put(g, gain, l.out_dim, "norm_gain")?;
                    put(o, off, l.out_dim, "norm_offset")?;
                }
                (None, None, None) => {}
                _ => return Err(shape(format!("layer {i}: layer-norm presence mismatch"))),
            }
        }
        Ok(ModelParams { config: ck.config, layout, values })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        Self::from_checkpoint(&ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            PincError::Json(j) => PincError::Parse { path: path.to_path_buf(), reason: j.to_string() },
            other => other,
        })
    }
}
