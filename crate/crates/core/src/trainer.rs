//! Training loop: batching, input noise, per-loss gradients, gradient
//! combination, AdamW and a reduce-on-plateau learning-rate schedule.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::GradientVector;
use crate::datagen::Dataset;
use crate::dynamics::{NetState, PhysicalParams, NET_DIM};
use crate::error::{PincError, Result};
use crate::gradcombine::{clip_norm, combine, GradScheme, DEFAULT_CLIP};
use crate::losses::{data_loss, loss_gradient, Batch, BatchTrajectory, LossKind, LossWeights};
use crate::model::{ModelConfig, ModelParams};

/// Lower bound kept on the adaptive-activation slopes.
pub const BETA_FLOOR: f64 = 1e-2;
/// Reported log10 losses never go below this.
pub const LOG10_FLOOR: f64 = -12.0;

pub fn log10_floored(v: f64) -> f64 {
    v.log10().max(LOG10_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One AdamW update with bias correction; weight decay is applied to the
/// parameters directly and never enters the moment estimates.
pub fn adamw_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamWConfig) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] *= 1.0 - lr * cfg.weight_decay;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub lr_min: f64,
    pub patience: usize,
    pub factor: f64,
    /// Relative improvement needed to reset the patience counter.
    pub threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { lr_min: 1e-4, patience: 100, factor: 0.5, threshold: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub config: SchedulerConfig,
    pub lr: f64,
    best: f64,
    bad: usize,
}

impl PlateauScheduler {
    pub fn new(lr0: f64, config: SchedulerConfig) -> Self {
        PlateauScheduler { config, lr: lr0, best: f64::INFINITY, bad: 0 }
    }

    /// Feeds one dev-loss observation and returns the learning rate to use
    /// from now on.
    pub fn update(&mut self, dev_loss: f64) -> f64 {
        if dev_loss < self.best * (1.0 - self.config.threshold) {
            self.best = dev_loss;
            self.bad = 0;
        } else {
            self.bad += 1;
            if self.bad >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.lr_min);
                self.bad = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Independent draw for every component of every input point.
    PerPoint,
    /// One draw per trajectory, shared by all of its points.
    PerTrajectory,
}

/// Adds `N(0, sigma^2)` noise to the network input states of `batch`.
/// Targets, controls and collocation times are untouched.
pub fn inject_noise(batch: &Batch, sigma: f64, mode: NoiseMode, rng: &mut ChaCha8Rng) -> Batch {
    let mut out = batch.clone();
    if sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    for tr in &mut out.trajectories {
        let mut shared = [0.0; NET_DIM];
        if mode == NoiseMode::PerTrajectory {
            shared.iter_mut().for_each(|e| *e = normal.sample(rng));
        }
        for s in &mut tr.inputs {
            let mut a = s.to_array();
            for (i, x) in a.iter_mut().enumerate() {
                *x += match mode {
                    NoiseMode::PerPoint => normal.sample(rng),
                    NoiseMode::PerTrajectory => shared[i],
                };
            }
            *s = NetState::from_array(a);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_epoch: usize,
    pub n_batch: usize,
    pub lr0: f64,
    pub use_scheduler: bool,
    pub scheduler: SchedulerConfig,
    pub adamw: AdamWConfig,
    pub losses: Vec<LossKind>,
    pub weights: LossWeights,
    pub grad_scheme: GradScheme,
    /// Clip the combined gradient to norm `clip`.
    pub clip_enabled: bool,
    pub clip: f64,
    pub noise_sigma: f64,
    pub noise_mode: NoiseMode,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_epoch: 1200,
            n_batch: 10,
            lr0: 8e-3,
            use_scheduler: true,
            scheduler: SchedulerConfig::default(),
            adamw: AdamWConfig::default(),
            losses: vec![LossKind::Data, LossKind::Physics],
            weights: LossWeights::default(),
            grad_scheme: GradScheme::Norm,
            clip_enabled: true,
            clip: DEFAULT_CLIP,
            noise_sigma: 0.0,
            noise_mode: NoiseMode::PerPoint,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.scheduler;
        if !(s.lr_min > 0.0 && self.lr0 > s.lr_min && self.lr0.is_finite()) {
            return Err(PincError::config("lr0", "need lr0 > scheduler.lr_min > 0"));
        }
        if s.patience == 0 {
            return Err(PincError::config("scheduler.patience", "must be >= 1"));
        }
        if !(s.factor > 0.0 && s.factor < 1.0) {
            return Err(PincError::config("scheduler.factor", "must lie in (0, 1)"));
        }
        if self.n_batch == 0 {
            return Err(PincError::config("n_batch", "must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(PincError::config("noise_sigma", "must be finite and >= 0"));
        }
        if self.losses.is_empty() {
            return Err(PincError::config("losses", "at least one loss must be active"));
        }
        if !(self.clip > 0.0) {
            return Err(PincError::config("clip", "must be positive"));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// log10 of the mean training loss over the epoch's batches.
    pub log10_losses: BTreeMap<LossKind, f64>,
    /// log10 of the dev one-step loss after the epoch.
    pub log10_dev: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Dev one-step loss of the untrained model (log10).
    pub initial_log10_dev: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

pub const METRICS_HEADER: &str =
    "epoch,log10_L_data,log10_L_phy,log10_L_ic,log10_L_roll,log10_L_phyroll,log10_L_dev,lr,seconds";

impl TrainHistory {
    /// Metrics table with one row per epoch; inactive losses are blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{}", r.epoch);
            for kind in LossKind::ALL {
                out.push(',');
                if let Some(v) = r.log10_losses.get(&kind) {
                    let _ = write!(out, "{v}");
                }
            }
            out.push(',');
            if let Some(v) = r.log10_dev {
                let _ = write!(out, "{v}");
            }
            let _ = writeln!(out, ",{},{:.3}", r.lr, r.seconds);
        }
        out
    }

    pub fn final_log10_dev(&self) -> Option<f64> {
        self.epochs.last().and_then(|r| r.log10_dev)
    }
}

/// Per-loss values and gradients for one batch, and their combination
/// (clipped when configured).
pub fn combined_gradient(
    params: &ModelParams,
    batch: &Batch,
    config: &TrainConfig,
    physical: &PhysicalParams,
) -> Result<(Vec<(LossKind, f64)>, GradientVector)> {
    let mut values = Vec::with_capacity(config.losses.len());
    let mut grads = Vec::with_capacity(config.losses.len());
    let mut weights = Vec::with_capacity(config.losses.len());
    for &kind in &config.losses {
        let (v, g) = loss_gradient(params, batch, kind, config.weights.n_pred, physical)?;
        values.push((kind, v));
        grads.push(g);
        weights.push(config.weights.weight(kind));
    }
    let mut g = combine(config.grad_scheme, &grads, &weights)?;
    if config.clip_enabled {
        g = clip_norm(&g, config.clip);
    }
    Ok((values, g))
}

/// Step-wise trainer; [`train`] runs it to completion.
pub struct Trainer {
    params: ModelParams,
    config: TrainConfig,
    physical: PhysicalParams,
    train: Vec<BatchTrajectory>,
    dev: Option<Batch>,
    adam: AdamState,
    scheduler: PlateauScheduler,
    shuffle_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    history: TrainHistory,
    started: Instant,
}

impl Trainer {
    pub fn new(params: ModelParams, train_set: &Dataset, dev_set: Option<&Dataset>, mut config: TrainConfig) -> Result<Self> {
        config.validate()?;
        // canonical order puts the data loss first, the reference of the norm scheme
        config.losses.sort();
        config.losses.dedup();
        if train_set.trajectories.is_empty() {
            return Err(PincError::InvalidBatch("training set is empty".into()));
        }
        let dev = dev_set.filter(|d| !d.trajectories.is_empty()).map(|d| Batch::from_trajectories(&d.trajectories));
        if config.use_scheduler && dev.is_none() {
            return Err(PincError::config("dev", "the learning-rate scheduler needs a non-empty dev set"));
        }
        let train = train_set.trajectories.iter().map(BatchTrajectory::from_trajectory).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
        noise_rng.set_stream(2);
        let initial_log10_dev = match &dev {
            Some(d) => Some(log10_floored(data_loss(&params, d)?)),
            None => None,
        };
        Ok(Trainer {
            adam: AdamState::new(params.len()),
            scheduler: PlateauScheduler::new(config.lr0, config.scheduler),
            physical: train_set.manifest.config.physical,
            params,
            config,
            train,
            dev,
            shuffle_rng,
            noise_rng,
            history: TrainHistory { initial_log10_dev, epochs: Vec::new() },
            started: Instant::now(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    /// One pass over the training trajectories. On error the parameters are
    /// left at their last finite state.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.history.epochs.len();
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        if self.config.shuffle {
            order.shuffle(&mut self.shuffle_rng);
        }
        let lr = self.scheduler.lr;
        let mut sums: BTreeMap<LossKind, f64> = BTreeMap::new();
        let mut n_batches = 0usize;
        for (b, chunk) in order.chunks(self.config.n_batch).enumerate() {
            let clean = Batch { trajectories: chunk.iter().map(|&i| self.train[i].clone()).collect() };
            let batch = inject_noise(&clean, self.config.noise_sigma, self.config.noise_mode, &mut self.noise_rng);
            let (values, g) = combined_gradient(&self.params, &batch, &self.config, &self.physical)
                .map_err(|e| PincError::TrainingDiverged { epoch, batch: b, source: Box::new(e) })?;
            for (kind, v) in values {
                *sums.entry(kind).or_default() += v;
            }
            let mut next = self.params.values.clone();
            let mut adam = self.adam.clone();
            adamw_step(&mut next, &g.0, &mut adam, lr, &self.config.adamw);
            if next.iter().any(|x| !x.is_finite()) {
                return Err(PincError::TrainingDiverged {
                    epoch,
                    batch: b,
                    source: Box::new(PincError::NonFinite { location: "parameter update".into() }),
                });
            }
            self.params.values = next;
            self.adam = adam;
            for i in self.params.layout.hidden.iter().filter_map(|l| l.beta) {
                self.params.values[i] = self.params.values[i].max(BETA_FLOOR);
            }
            n_batches += 1;
        }
        let log10_dev = match &self.dev {
            Some(d) => {
                let v = data_loss(&self.params, d)
                    .map_err(|e| PincError::TrainingDiverged { epoch, batch: n_batches, source: Box::new(e) })?;
                if !v.is_finite() {
                    return Err(PincError::TrainingDiverged {
                        epoch,
                        batch: n_batches,
                        source: Box::new(PincError::NonFiniteLoss { loss: "dev", what: "value" }),
                    });
                }
                if self.config.use_scheduler {
                    self.scheduler.update(v);
                }
                Some(log10_floored(v))
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            log10_losses: sums.into_iter().map(|(k, s)| (k, log10_floored(s / n_batches as f64))).collect(),
            log10_dev,
            lr,
            seconds: self.started.elapsed().as_secs_f64(),
        };
        self.history.epochs.push(record);
        Ok(self.history.epochs.last().expect("just pushed"))
    }

    pub fn finish(self) -> (ModelParams, TrainHistory) {
        (self.params, self.history)
    }
}

/// Trains a freshly initialized network (seeded by `config.seed`).
pub fn train(
    train_set: &Dataset,
    dev_set: Option<&Dataset>,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    let params = ModelParams::init(model, config.seed)?;
    let mut trainer = Trainer::new(params, train_set, dev_set, config.clone())?;
    for _ in 0..config.n_epoch {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GenerationConfig};
    use crate::gradcombine::sum_combine;
    use approx::assert_abs_diff_eq;

    fn tiny_sets() -> (Dataset, Dataset) {
        let mut train_cfg = GenerationConfig::training(4);
        train_cfg.n_steps = 8;
        let mut dev_cfg = GenerationConfig::evaluation("dev", 2, 0.08, 1);
        dev_cfg.n_steps = 8;
        (generate_dataset(&train_cfg).unwrap(), generate_dataset(&dev_cfg).unwrap())
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig { hidden_layers: 2, hidden_width: 8, ..Default::default() }
    }

    #[test]
    fn adamw_zero_gradient() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &[0.0, 0.0], &mut st, 0.1, &cfg);
        assert_eq!(p, vec![1.0, -2.0]);
        let cfg = AdamWConfig { weight_decay: 0.01, ..Default::default() };
        adamw_step(&mut p, &[0.0, 0.0], &mut st, 0.1, &cfg);
        assert_abs_diff_eq!(p[0], 1.0 * (1.0 - 0.1 * 0.01), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], -2.0 * (1.0 - 0.1 * 0.01), epsilon = 1e-15);
    }

    #[test]
    fn adamw_first_step_by_hand() {
        // m_hat = 1, v_hat = 1 after one step with g = 1
        let mut p = vec![0.5];
        let mut st = AdamState::new(1);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &[1.0], &mut st, 1e-3, &cfg);
        assert_abs_diff_eq!(p[0], 0.5 - 1e-3 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn scheduler_halves_after_patience() {
        let mut s = PlateauScheduler::new(8e-3, SchedulerConfig::default());
        s.update(1.0);
        for _ in 0..99 {
            assert_eq!(s.update(1.0), 8e-3);
        }
        assert_eq!(s.update(1.0), 4e-3);
        let mut s = PlateauScheduler::new(1e-4 * 1.5, SchedulerConfig::default());
        for _ in 0..1000 {
            s.update(1.0);
        }
        assert_eq!(s.lr, 1e-4);
        let mut s = PlateauScheduler::new(8e-3, SchedulerConfig::default());
        for i in 0..500 {
            assert_eq!(s.update(1.0 / (i + 1) as f64), 8e-3);
        }
    }

    #[test]
    fn noise_statistics_and_isolation() {
        let (train, _) = tiny_sets();
        let batch = Batch::from_trajectories(&train.trajectories);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(inject_noise(&batch, 0.0, NoiseMode::PerPoint, &mut rng), batch);
        let mut samples = Vec::new();
        while samples.len() < 100_000 {
            let noisy = inject_noise(&batch, 0.05, NoiseMode::PerPoint, &mut rng);
            for (a, b) in noisy.trajectories.iter().zip(&batch.trajectories) {
                assert_eq!(a.targets, b.targets);
                assert_eq!(a.controls, b.controls);
                assert_eq!(a.colloc, b.colloc);
                for (x, y) in a.inputs.iter().zip(&b.inputs) {
                    samples.extend(x.to_array().iter().zip(y.to_array()).map(|(p, q)| p - q));
                }
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / 0.05 - 1.0).abs() < 0.03, "std {std}");
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (train_set, dev) = tiny_sets();
        let config = TrainConfig { n_epoch: 0, ..Default::default() };
        let (params, history) = train(&train_set, Some(&dev), &tiny_model(), &config).unwrap();
        assert_eq!(params, ModelParams::init(&tiny_model(), 0).unwrap());
        assert!(history.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_lr_monotone() {
        let (train_set, dev) = tiny_sets();
        let config = TrainConfig {
            n_epoch: 6,
            n_batch: 3,
            noise_sigma: 0.01,
            scheduler: SchedulerConfig { patience: 1, ..Default::default() },
            ..Default::default()
        };
        let a = train(&train_set, Some(&dev), &tiny_model(), &config).unwrap();
        let b = train(&train_set, Some(&dev), &tiny_model(), &config).unwrap();
        assert_eq!(a.0, b.0);
        for (x, y) in a.1.epochs.iter().zip(&b.1.epochs) {
            assert_eq!((x.epoch, &x.log10_losses, x.log10_dev, x.lr), (y.epoch, &y.log10_losses, y.log10_dev, y.lr));
        }
        let lrs: Vec<f64> = a.1.epochs.iter().map(|r| r.lr).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&l| l >= 1e-4));
        let csv = a.1.to_csv();
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 7);
        // ic, roll and phyroll are inactive
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), 9);
        assert!(row[3].is_empty() && row[4].is_empty() && row[5].is_empty());
    }

    #[test]
    fn disabled_losses_contribute_nothing() {
        let (train_set, _) = tiny_sets();
        let batch = Batch::from_trajectories(&train_set.trajectories);
        let params = ModelParams::init(&tiny_model(), 1).unwrap();
        let phys = PhysicalParams::default();
        let config = TrainConfig {
            losses: vec![LossKind::Data, LossKind::InitialCondition],
            grad_scheme: GradScheme::Sum,
            clip_enabled: false,
            ..Default::default()
        };
        let (_, g) = combined_gradient(&params, &batch, &config, &phys).unwrap();
        let (_, gd) = loss_gradient(&params, &batch, LossKind::Data, 10, &phys).unwrap();
        let (_, gi) = loss_gradient(&params, &batch, LossKind::InitialCondition, 10, &phys).unwrap();
        assert_eq!(g, sum_combine(&[gd, gi], &[1.0, 0.5]).unwrap());
    }

    #[test]
    fn beta_stays_above_floor() {
        let (train_set, dev) = tiny_sets();
        let config = TrainConfig { n_epoch: 3, n_batch: 2, lr0: 0.5, ..Default::default() };
        let (params, _) = train(&train_set, Some(&dev), &tiny_model(), &config).unwrap();
        assert!(params.betas().iter().all(|&b| b >= BETA_FLOOR));
    }
}
