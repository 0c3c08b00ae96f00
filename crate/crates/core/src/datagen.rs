//! Synthetic trajectory datasets: sampled initial conditions, ramp or sine
//! input channels, RK4 ground truth and Latin-hypercube collocation times.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    simulate_trajectory, to_net_state, wrap_angle, ControlInput, NetState, PhysicalParams, StateVector,
};
use crate::error::{PincError, Result};

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seed_from_u64(seed), stream = trajectory index";

/// Half-widths of the uniform initial-condition boxes. `w` is drawn from
/// `[0, w_max]` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRanges {
    pub x_max: f64,
    pub y_max: f64,
    pub z_max: f64,
    pub psi_max: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub r_max: f64,
}

impl SamplingRanges {
    /// Ranges used for the training set.
    pub fn training() -> Self {
        SamplingRanges {
            x_max: 1.0,
            y_max: 1.0,
            z_max: 1.0,
            psi_max: PI,
            u_max: 1.0,
            v_max: 0.0,
            w_max: 0.1,
            r_max: 0.0,
        }
    }

    /// Development and test sets start at rest at the origin with random heading.
    pub fn evaluation() -> Self {
        SamplingRanges {
            x_max: 0.0,
            y_max: 0.0,
            z_max: 0.0,
            psi_max: PI,
            u_max: 0.0,
            v_max: 0.0,
            w_max: 0.0,
            r_max: 0.0,
        }
    }

    pub fn zero() -> Self {
        SamplingRanges { psi_max: 0.0, ..Self::evaluation() }
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("x_max", self.x_max),
            ("y_max", self.y_max),
            ("z_max", self.z_max),
            ("psi_max", self.psi_max),
            ("u_max", self.u_max),
            ("v_max", self.v_max),
            ("w_max", self.w_max),
            ("r_max", self.r_max),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PincError::config(format!("ranges.{name}"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Ramp,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub kind: InputKind,
    pub amplitude: f64,
    pub freq_lo: f64,
    pub freq_hi: f64,
    pub phase_lo: f64,
    pub phase_hi: f64,
    pub offset_variance: f64,
    pub sign_probability: f64,
}

impl InputSpec {
    pub fn ramp() -> Self {
        InputSpec {
            kind: InputKind::Ramp,
            amplitude: 1.0,
            freq_lo: 0.0,
            freq_hi: 0.0,
            phase_lo: 0.0,
            phase_hi: 0.0,
            offset_variance: 0.25,
            sign_probability: 0.5,
        }
    }

    pub fn sine() -> Self {
        InputSpec {
            kind: InputKind::Sine,
            amplitude: 3.0,
            freq_lo: 0.01,
            freq_hi: 0.2,
            phase_lo: 0.0,
            phase_hi: 2.0 * PI,
            offset_variance: 0.0,
            sign_probability: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.freq_lo <= self.freq_hi) {
            return Err(PincError::config("input.freq_lo", "must not exceed freq_hi"));
        }
        if !(self.phase_lo <= self.phase_hi) {
            return Err(PincError::config("input.phase_lo", "must not exceed phase_hi"));
        }
        if !(self.offset_variance >= 0.0) {
            return Err(PincError::config("input.offset_variance", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.sign_probability) {
            return Err(PincError::config("input.sign_probability", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One input channel as a function of time since trajectory start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Channel {
    Ramp { sign: f64, offset: f64, total_time: f64, amplitude: f64 },
    Sine { amplitude: f64, freq: f64, phase: f64 },
}

impl Channel {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Channel::Ramp { sign, offset, total_time, amplitude } => {
                sign * amplitude * ramp_value(t, total_time) + offset
            }
            Channel::Sine { amplitude, freq, phase } => amplitude * (2.0 * PI * freq * t + phase).sin(),
        }
    }
}

/// Triangle profile: 0 at both ends, 1 at `total_time / 2`.
pub fn ramp_value(t: f64, total_time: f64) -> f64 {
    let half = 0.5 * total_time;
    if t <= half {
        t / half
    } else {
        2.0 * (1.0 - t / total_time)
    }
}

pub fn make_ramp_channel<R: Rng + ?Sized>(total_time: f64, rng: &mut R, spec: &InputSpec) -> Channel {
    let sign = if rng.random_bool(spec.sign_probability) { 1.0 } else { -1.0 };
    let offset = Normal::new(0.0, spec.offset_variance.sqrt()).expect("variance validated").sample(rng);
    Channel::Ramp { sign, offset, total_time, amplitude: spec.amplitude }
}

pub fn make_sine_channel<R: Rng + ?Sized>(rng: &mut R, spec: &InputSpec) -> Channel {
    let freq = uniform(rng, spec.freq_lo, spec.freq_hi);
    let phase = uniform(rng, spec.phase_lo, spec.phase_hi);
    Channel::Sine { amplitude: spec.amplitude, freq, phase }
}

/// Per-channel scaling applied to every dataset: sway force x0.1, yaw moment
/// x0.05, heave force x5 and rectified so only diving is commanded.
pub fn scale_controls(raw: [f64; 4]) -> ControlInput {
    ControlInput { fx: raw[0], fy: 0.1 * raw[1], fz: (5.0 * raw[2]).abs(), mz: 0.05 * raw[3] }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn sample_initial_state<R: Rng + ?Sized>(ranges: &SamplingRanges, rng: &mut R) -> StateVector {
    let sym = |rng: &mut R, half: f64| uniform(rng, -half, half);
    StateVector {
        x: sym(rng, ranges.x_max),
        y: sym(rng, ranges.y_max),
        z: sym(rng, ranges.z_max),
        psi: wrap_angle(sym(rng, ranges.psi_max)),
        u: sym(rng, ranges.u_max),
        v: sym(rng, ranges.v_max),
        w: uniform(rng, 0.0, ranges.w_max),
        r: sym(rng, ranges.r_max),
    }
}

/// One-dimensional Latin hypercube on `[0, period]`: one uniform draw per
/// equal-width stratum, returned in shuffled order.
pub fn lhs_collocation<R: Rng + ?Sized>(n: usize, period: f64, rng: &mut R) -> Vec<f64> {
    assert!(n >= 1, "need at least one collocation point");
    let width = period / n as f64;
    let mut taus: Vec<f64> = (0..n)
        .map(|i| {
            let tau = (i as f64 + rng.random::<f64>()) * width;
            tau.min(period)
        })
        .collect();
    taus.shuffle(rng);
    taus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub name: String,
    pub seed: u64,
    pub n_traj: usize,
    pub n_steps: usize,
    /// Sampling period `T` in seconds.
    pub period: f64,
    pub n_colloc: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub ranges: SamplingRanges,
    pub input: InputSpec,
    #[serde(default)]
    pub physical: PhysicalParams,
}

fn default_substeps() -> usize {
    10
}

impl GenerationConfig {
    pub fn training(n_traj: usize) -> Self {
        GenerationConfig {
            name: "train".into(),
            seed: 0,
            n_traj,
            n_steps: 66,
            period: 0.08,
            n_colloc: 1,
            substeps: 10,
            ranges: SamplingRanges::training(),
            input: InputSpec::ramp(),
            physical: PhysicalParams::default(),
        }
    }

    pub fn evaluation(name: &str, n_traj: usize, period: f64, seed: u64) -> Self {
        GenerationConfig {
            name: name.into(),
            seed,
            n_traj,
            n_steps: 66,
            period,
            n_colloc: 1,
            substeps: 10,
            ranges: SamplingRanges::evaluation(),
            input: InputSpec::sine(),
            physical: PhysicalParams::default(),
        }
    }

    pub fn total_time(&self) -> f64 {
        (self.n_steps - 1) as f64 * self.period
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(PincError::config("n_traj", "must be >= 1"));
        }
        if self.n_steps < 2 {
            return Err(PincError::config("n_steps", "must be >= 2"));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(PincError::config("period", "must be a positive number of seconds"));
        }
        if self.n_colloc == 0 {
            return Err(PincError::config("n_colloc", "must be >= 1"));
        }
        if self.substeps == 0 {
            return Err(PincError::config("substeps", "must be >= 1"));
        }
        self.ranges.validate()?;
        self.input.validate()?;
        self.physical.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub period: f64,
    pub states: Vec<StateVector>,
    /// `controls[n]` is held over `[nT, (n+1)T)`; one shorter than `states`.
    pub controls: Vec<ControlInput>,
    /// Collocation times inside each interval, `colloc[n][k]` in `[0, T]`.
    pub colloc: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn net_states(&self) -> Vec<NetState> {
        self.states.iter().map(to_net_state).collect()
    }

    fn check(&self) -> Result<()> {
        if self.controls.len() + 1 != self.states.len() || self.colloc.len() != self.controls.len() {
            return Err(PincError::InvalidBatch("inconsistent trajectory lengths".into()));
        }
        if self.colloc.iter().flatten().any(|&tau| !(0.0..=self.period).contains(&tau)) {
            return Err(PincError::InvalidBatch("collocation time outside [0, T]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenerationConfig,
    pub seed: u64,
    pub period: f64,
    pub n_steps: usize,
    pub total_time: f64,
    pub n_colloc: usize,
    pub rng: String,
    pub files: Vec<String>,
    #[serde(default)]
    pub content_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn period(&self) -> f64 {
        self.manifest.period
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate_trajectory(config: &GenerationConfig, index: usize) -> Result<Trajectory> {
    let mut rng = trajectory_rng(config.seed, index);
    let x0 = sample_initial_state(&config.ranges, &mut rng);
    let total = config.total_time();
    let channels: Vec<Channel> = (0..4)
        .map(|_| match config.input.kind {
            InputKind::Ramp => make_ramp_channel(total, &mut rng, &config.input),
            InputKind::Sine => make_sine_channel(&mut rng, &config.input),
        })
        .collect();
    let controls: Vec<ControlInput> = (0..config.n_steps - 1)
        .map(|n| {
            let t = n as f64 * config.period;
            scale_controls([channels[0].eval(t), channels[1].eval(t), channels[2].eval(t), channels[3].eval(t)])
        })
        .collect();
    let states = simulate_trajectory(&x0, &controls, &config.physical, config.period, config.substeps)?;
    let colloc = (0..controls.len())
        .map(|_| lhs_collocation(config.n_colloc, config.period, &mut rng))
        .collect();
    Ok(Trajectory { period: config.period, states, controls, colloc })
}

pub fn generate_dataset(config: &GenerationConfig) -> Result<Dataset> {
    config.validate()?;
    let trajectories = (0..config.n_traj)
        .map(|i| generate_trajectory(config, i))
        .collect::<Result<Vec<_>>>()?;
    let files = (0..config.n_traj).map(trajectory_file_name).collect();
    let mut manifest = Manifest {
        config: config.clone(),
        seed: config.seed,
        period: config.period,
        n_steps: config.n_steps,
        total_time: config.total_time(),
        n_colloc: config.n_colloc,
        rng: RNG_ALGORITHM.into(),
        files,
        content_sha256: String::new(),
    };
    manifest.content_sha256 = content_hash(&trajectories);
    Ok(Dataset { trajectories, manifest })
}

/// Dev, interpolation and extrapolation sets: identical sine protocol,
/// periods 0.08 / 0.06 / 0.10 s, each with its own seed.
pub fn build_eval_sets(n_traj: usize, seeds: [u64; 3]) -> Result<EvalSets> {
    Ok(EvalSets {
        dev: generate_dataset(&GenerationConfig::evaluation("dev", n_traj, 0.08, seeds[0]))?,
        interp: generate_dataset(&GenerationConfig::evaluation("test_interp", n_traj, 0.06, seeds[1]))?,
        extrap: generate_dataset(&GenerationConfig::evaluation("test_extrap", n_traj, 0.10, seeds[2]))?,
    })
}

#[derive(Debug, Clone)]
pub struct EvalSets {
    pub dev: Dataset,
    pub interp: Dataset,
    pub extrap: Dataset,
}

pub fn trajectory_file_name(index: usize) -> String {
    format!("traj_{index:04}.csv")
}

pub fn colloc_file_name(index: usize) -> String {
    format!("colloc_{index:04}.csv")
}

pub const TRAJECTORY_HEADER: &str = "t,x,y,z,psi,u,v,w,r,Fx,Fy,Fz,Mz";

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for (n, s) in traj.states.iter().enumerate() {
        let t = n as f64 * traj.period;
        let row: Vec<String> = std::iter::once(t).chain(s.to_array()).map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        match traj.controls.get(n) {
            Some(u) => {
                for v in u.to_array() {
                    out.push(',');
                    out.push_str(&v.to_string());
                }
            }
            None => out.push_str(",,,,"),
        }
        out.push('\n');
    }
    out
}

pub fn colloc_csv(traj: &Trajectory) -> String {
    let mut out = String::from("interval_index,tau\n");
    for (n, taus) in traj.colloc.iter().enumerate() {
        for tau in taus {
            out.push_str(&format!("{n},{tau}\n"));
        }
    }
    out
}

fn content_hash(trajectories: &[Trajectory]) -> String {
    let mut hasher = Sha256::new();
    for traj in trajectories {
        hasher.update(trajectory_csv(traj).as_bytes());
        hasher.update(colloc_csv(traj).as_bytes());
    }
    hex::encode(hasher.finalize())
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        fs::write(dir.join(trajectory_file_name(i)), trajectory_csv(traj))?;
        fs::write(dir.join(colloc_file_name(i)), colloc_csv(traj))?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&dataset.manifest)?)?;
    Ok(())
}

fn parse_err(path: &Path, reason: impl Into<String>) -> PincError {
    PincError::Parse { path: path.to_path_buf(), reason: reason.into() }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| parse_err(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| parse_err(&path, e.to_string()))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut trajectories = Vec::with_capacity(manifest.files.len());
    for (i, file) in manifest.files.iter().enumerate() {
        let path: PathBuf = dir.join(file);
        let mut reader = csv::Reader::from_path(&path).map_err(|e| parse_err(&path, e.to_string()))?;
        let mut states = Vec::new();
        let mut controls = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| parse_err(&path, e.to_string()))?;
            if record.len() != 13 {
                return Err(parse_err(&path, format!("expected 13 columns, found {}", record.len())));
            }
            let num = |j: usize| -> Result<f64> {
                record[j].parse::<f64>().map_err(|e| parse_err(&path, format!("column {j}: {e}")))
            };
            let mut s = [0.0; 8];
            for (j, slot) in s.iter_mut().enumerate() {
                *slot = num(j + 1)?;
            }
            states.push(StateVector::from_array(s));
            if !record[9].is_empty() {
                controls.push(ControlInput::from_array([num(9)?, num(10)?, num(11)?, num(12)?]));
            }
        }
        let cpath = dir.join(colloc_file_name(i));
        let mut colloc = vec![Vec::new(); controls.len()];
        let mut reader = csv::Reader::from_path(&cpath).map_err(|e| parse_err(&cpath, e.to_string()))?;
        for record in reader.records() {
            let record = record.map_err(|e| parse_err(&cpath, e.to_string()))?;
            let n: usize = record[0].parse().map_err(|_| parse_err(&cpath, "bad interval_index"))?;
            let tau: f64 = record[1].parse().map_err(|_| parse_err(&cpath, "bad tau"))?;
            colloc
                .get_mut(n)
                .ok_or_else(|| parse_err(&cpath, format!("interval {n} out of range")))?
                .push(tau);
        }
        let traj = Trajectory { period: manifest.period, states, controls, colloc };
        traj.check().map_err(|e| parse_err(&path, e.to_string()))?;
        if traj.len() != manifest.n_steps {
            return Err(parse_err(&path, format!("expected {} rows, found {}", manifest.n_steps, traj.len())));
        }
        trajectories.push(traj);
    }
    Ok(Dataset { trajectories, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn initial_state_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_initial_state(&SamplingRanges::zero(), &mut rng);
        assert_eq!(s, StateVector::default());
        for _ in 0..200 {
            let s = sample_initial_state(&SamplingRanges::evaluation(), &mut rng);
            assert!(s.psi >= -PI && s.psi <= PI);
            assert_eq!(StateVector { psi: 0.0, ..s }, StateVector::default());
        }
        let ranges = SamplingRanges { u_max: 1.0, ..SamplingRanges::zero() };
        let us: Vec<f64> = (0..10_000).map(|_| sample_initial_state(&ranges, &mut rng).u).collect();
        let mean = us.iter().sum::<f64>() / us.len() as f64;
        assert!(mean.abs() < 0.05);
        assert!(us.iter().all(|u| (-1.0..=1.0).contains(u)));
        let ranges = SamplingRanges::training();
        assert!((0..1000).all(|_| sample_initial_state(&ranges, &mut rng).w >= 0.0));
    }

    #[test]
    fn ramp_profile() {
        assert_eq!(ramp_value(2.6, 5.2), 1.0);
        assert_eq!(ramp_value(0.0, 5.2), 0.0);
        assert_eq!(ramp_value(5.2, 5.2), 0.0);
        let up = Channel::Ramp { sign: 1.0, offset: 0.0, total_time: 5.2, amplitude: 1.0 };
        let down = Channel::Ramp { sign: -1.0, offset: 0.0, total_time: 5.2, amplitude: 1.0 };
        assert_eq!(up.eval(2.6), 1.0);
        assert_eq!(down.eval(2.6), -1.0);
    }

    #[test]
    fn ramp_offsets_have_configured_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = InputSpec::ramp();
        let offsets: Vec<f64> = (0..10_000)
            .map(|_| match make_ramp_channel(5.2, &mut rng, &spec) {
                Channel::Ramp { offset, .. } => offset,
                _ => unreachable!(),
            })
            .collect();
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let var = offsets.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (offsets.len() - 1) as f64;
        assert!((var - 0.25).abs() < 0.025, "variance {var}");
    }

    #[test]
    fn sine_channel_properties() {
        let c = Channel::Sine { amplitude: 3.0, freq: 0.1, phase: 0.0 };
        assert_eq!(c.eval(0.0), 0.0);
        let c = Channel::Sine { amplitude: 3.0, freq: 0.2, phase: PI / 2.0 };
        assert_eq!(c.eval(0.0), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let c = make_sine_channel(&mut rng, &InputSpec::sine());
            let Channel::Sine { freq, phase, .. } = c else { unreachable!() };
            assert!((0.01..=0.2).contains(&freq));
            assert!((0.0..=2.0 * PI).contains(&phase));
            for k in 0..50 {
                assert!(c.eval(k as f64 * 0.13).abs() <= 3.0);
            }
        }
    }

    #[test]
    fn control_scaling() {
        assert_eq!(scale_controls([0.0, 1.0, 0.0, 0.0]).fy, 0.1);
        assert_eq!(scale_controls([0.0, 0.0, -0.4, 0.0]).fz, 2.0);
        assert_eq!(scale_controls([0.0, 0.0, 0.0, 2.0]).mz, 0.1);
        assert_eq!(scale_controls([0.0; 4]), ControlInput::ZERO);
    }

    #[test]
    fn lhs_stratification() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let single = lhs_collocation(1, 0.08, &mut rng);
        assert_eq!(single.len(), 1);
        assert!((0.0..=0.08).contains(&single[0]));
        for _ in 0..100 {
            let mut taus = lhs_collocation(4, 0.08, &mut rng);
            taus.sort_by(f64::total_cmp);
            for (i, tau) in taus.iter().enumerate() {
                let lo = i as f64 * 0.02;
                assert!(*tau >= lo - 1e-15 && *tau <= lo + 0.02 + 1e-15, "{tau} not in stratum {i}");
            }
        }
        let mean = (0..10_000).map(|_| lhs_collocation(1, 0.08, &mut rng)[0]).sum::<f64>() / 10_000.0;
        assert!((mean - 0.04).abs() < 0.002);
    }

    #[test]
    fn dataset_is_deterministic_and_consistent() {
        let mut config = GenerationConfig::training(5);
        config.n_colloc = 3;
        let a = generate_dataset(&config).unwrap();
        let b = generate_dataset(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.manifest.content_sha256, b.manifest.content_sha256);
        assert_abs_diff_eq!(a.manifest.total_time, 5.2, epsilon = 1e-12);
        for traj in &a.trajectories {
            traj.check().unwrap();
            assert_eq!(traj.len(), 66);
            assert!(traj.controls.iter().all(|u| u.fz >= 0.0));
            for taus in &traj.colloc {
                let mut sorted = taus.clone();
                sorted.sort_by(f64::total_cmp);
                for (i, tau) in sorted.iter().enumerate() {
                    assert!(*tau >= i as f64 * 0.08 / 3.0 - 1e-15);
                    assert!(*tau <= (i + 1) as f64 * 0.08 / 3.0 + 1e-15);
                }
            }
        }
        config.seed = 1;
        assert_ne!(generate_dataset(&config).unwrap().trajectories, a.trajectories);
    }

    #[test]
    fn eval_sets_follow_protocol() {
        let sets = build_eval_sets(3, [1, 2, 3]).unwrap();
        assert_eq!(sets.dev.period(), 0.08);
        assert_eq!(sets.interp.period(), 0.06);
        assert_eq!(sets.extrap.period(), 0.10);
        for set in [&sets.dev, &sets.interp, &sets.extrap] {
            assert_eq!(set.manifest.n_steps, 66);
            for traj in &set.trajectories {
                let s0 = traj.states[0];
                assert_eq!(StateVector { psi: 0.0, ..s0 }, StateVector::default());
            }
        }
    }

    #[test]
    fn csv_roundtrip() {
        let mut config = GenerationConfig::training(2);
        config.n_colloc = 2;
        let data = generate_dataset(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&data, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("traj_0000.csv")).unwrap();
        assert!(text.starts_with(TRAJECTORY_HEADER));
        assert!(text.lines().last().unwrap().ends_with(",,,,"));
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn rejects_bad_config() {
        let mut config = GenerationConfig::training(1);
        config.period = 0.0;
        let err = generate_dataset(&config).unwrap_err();
        assert!(err.to_string().contains("period"));
        let mut config = GenerationConfig::training(1);
        config.input.freq_lo = 1.0;
        config.input.freq_hi = 0.5;
        assert!(generate_dataset(&config).unwrap_err().to_string().contains("freq_lo"));
    }
}
