//! File-level workflows behind the `pinc` binary: dataset generation,
//! training runs, evaluation reports, ablation grids and plot data.
//!
//! Configuration resolution order, lowest to highest priority: built-in
//! defaults, the TOML file, `PINC_SEED`, command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    generate_dataset, lhs_collocation, read_dataset, write_dataset, Dataset, EvalSets, GenerationConfig, InputSpec,
    SamplingRanges,
};
use crate::dynamics::PhysicalParams;
use crate::error::{PincError, Result};
use crate::eval::{full_report, prediction_csv, rollout_error_csv, rollout_position_errors, EvalReport, VPT_THRESHOLD};
use crate::model::{ModelConfig, ModelParams};
use crate::trainer::{TrainConfig, TrainHistory, Trainer};

pub const SEED_ENV: &str = "PINC_SEED";

/// Names of the evaluation-set directories inside a sets directory.
pub const SET_DIRS: [&str; 3] = ["dev", "test_interp", "test_extrap"];

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| PincError::config(SEED_ENV, format!("expected an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PincError::Parse { path: path.to_path_buf(), reason: e.to_string() })
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| PincError::Parse { path: path.to_path_buf(), reason: e.to_string() })
}

/// Refuses to write into a non-empty directory unless `force` is set.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(PincError::OutputExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

// ----- generate -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum RangesSpec {
    Preset(String),
    Table(SamplingRanges),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum InputsSpec {
    Preset(String),
    Table(InputSpec),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum PhysicalSpec {
    File(PathBuf),
    Table(toml::Table),
}

/// Dataset preset file. `ranges` is `"training"`, `"evaluation"` or a full
/// table; `inputs` is `"ramp"`, `"sine"` or a full table; `physical` is a
/// parameter file path or a table of overrides.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    name: String,
    seed: u64,
    n_traj: usize,
    #[serde(default = "default_n_steps")]
    n_steps: usize,
    #[serde(default = "default_period")]
    period: f64,
    #[serde(default = "default_one")]
    n_colloc: usize,
    #[serde(default = "default_substeps")]
    substeps: usize,
    ranges: RangesSpec,
    inputs: InputsSpec,
    physical: Option<PhysicalSpec>,
}

fn default_n_steps() -> usize {
    66
}
fn default_period() -> f64 {
    0.08
}
fn default_one() -> usize {
    1
}
fn default_substeps() -> usize {
    10
}

/// Reads a dataset preset into a generation config.
pub fn load_generation_config(path: &Path) -> Result<GenerationConfig> {
    let file: GenerateFile = parse_toml(&read_text(path)?, path)?;
    let ranges = match file.ranges {
        RangesSpec::Preset(p) => match p.as_str() {
            "training" => SamplingRanges::training(),
            "evaluation" => SamplingRanges::evaluation(),
            "zero" => SamplingRanges::zero(),
            other => return Err(PincError::config("ranges", format!("unknown preset `{other}`"))),
        },
        RangesSpec::Table(t) => t,
    };
    let input = match file.inputs {
        InputsSpec::Preset(p) => match p.as_str() {
            "ramp" => InputSpec::ramp(),
            "sine" => InputSpec::sine(),
            other => return Err(PincError::config("inputs", format!("unknown preset `{other}`"))),
        },
        InputsSpec::Table(t) => t,
    };
    let physical = match file.physical {
        None => PhysicalParams::default(),
        Some(PhysicalSpec::File(p)) => {
            let p = if p.is_relative() { path.parent().unwrap_or(Path::new(".")).join(p) } else { p };
            PhysicalParams::from_file(&p)?
        }
        Some(PhysicalSpec::Table(t)) => PhysicalParams::from_toml_str(&t.to_string())?,
    };
    let config = GenerationConfig {
        name: file.name,
        seed: file.seed,
        n_traj: file.n_traj,
        n_steps: file.n_steps,
        period: file.period,
        n_colloc: file.n_colloc,
        substeps: file.substeps,
        ranges,
        input,
        physical,
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    pub seed: Option<u64>,
    pub n_traj: Option<usize>,
    pub force: bool,
}

pub fn cmd_generate(config_path: &Path, out: &Path, opts: &GenerateOptions) -> Result<Dataset> {
    let mut config = load_generation_config(config_path)?;
    if let Some(s) = seed_from_env()? {
        config.seed = s;
    }
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    if let Some(n) = opts.n_traj {
        config.n_traj = n;
    }
    config.validate()?;
    let dataset = generate_dataset(&config)?;
    prepare_out_dir(out, opts.force)?;
    write_dataset(&dataset, out)?;
    fs::write(out.join("generate_config_echo.json"), serde_json::to_string_pretty(&config)?)?;
    Ok(dataset)
}

// ----- train ----------------------------------------------------------------------

/// Resolved training-run configuration, as echoed next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Resample this many collocation points per interval (LHS, seeded by
    /// the training seed) when it differs from the dataset's own.
    pub colloc: Option<usize>,
    /// Write `model_epoch<k>.json` every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { colloc: None, checkpoint_every: 0, model: ModelConfig::default(), train: TrainConfig::default() }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        parse_toml(text, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_text(path)?, path)
    }

    /// Applies a `section.key = value` override (or a top-level key).
    pub fn with_override(&self, key: &str, value: toml::Value) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| PincError::config(key, e.to_string()))?;
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().unwrap_or(key);
        let mut cursor = &mut table;
        for part in parts {
            cursor = cursor
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| PincError::config(key, "not a section"))?;
        }
        cursor.insert(last.to_string(), value);
        RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| PincError::config(key, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.colloc == Some(0) {
            return Err(PincError::config("colloc", "must be >= 1"));
        }
        Ok(())
    }
}

/// Command-line overrides of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub losses: Option<String>,
    pub grad: Option<String>,
    pub batch: Option<usize>,
    pub colloc: Option<usize>,
    pub epochs: Option<usize>,
    pub lr0: Option<f64>,
    pub seed: Option<u64>,
    pub noise_sigma: Option<f64>,
    pub activation: Option<String>,
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
    pub ablate_residual: bool,
    pub no_scheduler: bool,
}

impl TrainOverrides {
    pub fn apply(&self, mut run: RunConfig) -> Result<RunConfig> {
        if let Some(s) = seed_from_env()? {
            run.train.seed = s;
        }
        if let Some(l) = &self.losses {
            run.train.losses = crate::losses::parse_loss_list(l)?;
        }
        if let Some(g) = &self.grad {
            run.train.grad_scheme = g.parse()?;
        }
        if let Some(b) = self.batch {
            run.train.n_batch = b;
        }
        if let Some(c) = self.colloc {
            run.colloc = Some(c);
        }
        if let Some(e) = self.epochs {
            run.train.n_epoch = e;
        }
        if let Some(lr) = self.lr0 {
            run.train.lr0 = lr;
        }
        if let Some(s) = self.seed {
            run.train.seed = s;
        }
        if let Some(s) = self.noise_sigma {
            run.train.noise_sigma = s;
        }
        if let Some(a) = &self.activation {
            run.model.activation = a.parse()?;
        }
        if let Some(n) = self.hidden_layers {
            run.model.hidden_layers = n;
        }
        if let Some(n) = self.hidden_width {
            run.model.hidden_width = n;
        }
        if self.ablate_residual {
            run.model.residual_connection = false;
        }
        if self.no_scheduler {
            run.train.use_scheduler = false;
        }
        run.validate()?;
        Ok(run)
    }
}

/// Replaces the collocation times of every interval with `n` fresh LHS
/// samples; trajectory `i` draws from stream `i` of a generator seeded by
/// `seed`.
pub fn resample_collocation(dataset: &mut Dataset, n: usize, seed: u64) {
    for (i, traj) in dataset.trajectories.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let period = traj.period;
        for taus in traj.colloc.iter_mut() {
            *taus = lhs_collocation(n, period, &mut rng);
        }
    }
    dataset.manifest.n_colloc = n;
}

fn check_compatible(a: &Dataset, b: &Dataset, what: &str) -> Result<()> {
    let (ma, mb) = (&a.manifest, &b.manifest);
    if (ma.period - mb.period).abs() > 1e-12 || ma.n_steps != mb.n_steps {
        return Err(PincError::Incompatible(format!(
            "{what}: T = {} s / N_steps = {} versus T = {} s / N_steps = {}",
            ma.period, ma.n_steps, mb.period, mb.n_steps
        )));
    }
    Ok(())
}

/// Outcome of a training run written to disk.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// Trains on in-memory datasets and writes checkpoints, metrics and the
/// config echo into `out`. On divergence the last finite parameters are
/// saved as `model_last_finite.json` before the error is returned.
pub fn run_training(run: &RunConfig, train: &Dataset, dev: Option<&Dataset>, out: &Path) -> Result<TrainOutput> {
    run.validate()?;
    if let Some(d) = dev {
        check_compatible(train, d, "training and dev sets differ")?;
    }
    let mut train = train.clone();
    if let Some(n) = run.colloc {
        if n != train.manifest.n_colloc {
            resample_collocation(&mut train, n, run.train.seed);
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("train_config_echo.json"), serde_json::to_string_pretty(run)?)?;
    let params = ModelParams::init(&run.model, run.train.seed)?;
    let mut trainer = Trainer::new(params, &train, dev, run.train.clone())?;
    for _ in 0..run.train.n_epoch {
        if let Err(e) = trainer.run_epoch() {
            trainer.params().save(&out.join("model_last_finite.json"))?;
            fs::write(out.join("metrics.csv"), trainer.history().to_csv())?;
            return Err(e);
        }
        let done = trainer.epochs_done();
        if run.checkpoint_every > 0 && done % run.checkpoint_every == 0 {
            trainer.params().save(&out.join(format!("model_epoch{done}.json")))?;
        }
    }
    let (params, history) = trainer.finish();
    params.save(&out.join("model_final.json"))?;
    fs::write(out.join("metrics.csv"), history.to_csv())?;
    Ok(TrainOutput { params, history })
}

pub fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    dev: Option<&Path>,
    out: &Path,
    overrides: &TrainOverrides,
    force: bool,
) -> Result<TrainOutput> {
    let base = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let run = overrides.apply(base)?;
    let train = read_dataset(data)?;
    let dev = dev.map(read_dataset).transpose()?;
    prepare_out_dir(out, force)?;
    run_training(&run, &train, dev.as_ref(), out)
}

// ----- eval -----------------------------------------------------------------------

pub fn read_eval_sets(dir: &Path) -> Result<EvalSets> {
    Ok(EvalSets {
        dev: read_dataset(&dir.join(SET_DIRS[0]))?,
        interp: read_dataset(&dir.join(SET_DIRS[1]))?,
        extrap: read_dataset(&dir.join(SET_DIRS[2]))?,
    })
}

/// Evaluates `params` on the three sets and writes the JSON report plus a
/// per-trajectory rollout-error CSV next to it.
pub fn write_report(params: &ModelParams, sets: &EvalSets, report: &Path, threshold: f64) -> Result<EvalReport> {
    let echo = serde_json::json!({
        "model": params.config,
        "parameters": params.len(),
        "sets": {
            "dev": { "period": sets.dev.manifest.period, "n_traj": sets.dev.len(), "seed": sets.dev.manifest.seed },
            "interp": { "period": sets.interp.manifest.period, "n_traj": sets.interp.len(), "seed": sets.interp.manifest.seed },
            "extrap": { "period": sets.extrap.manifest.period, "n_traj": sets.extrap.len(), "seed": sets.extrap.manifest.seed },
        },
    });
    let physical = sets.dev.manifest.config.physical;
    let rep = full_report(params, sets, &physical, threshold, echo)?;
    if let Some(parent) = report.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(report, serde_json::to_string_pretty(&rep)?)?;
    let mut csv = String::new();
    for (name, set) in [("dev", &sets.dev), ("interp", &sets.interp), ("extrap", &sets.extrap)] {
        let errors = rollout_position_errors(params, &set.trajectories);
        let part = rollout_error_csv(name, &errors, &set.trajectories);
        csv.push_str(if csv.is_empty() { &part } else { part.split_once('\n').map_or("", |p| p.1) });
    }
    fs::write(companion_path(report, "rollout_errors.csv"), csv)?;
    Ok(rep)
}

fn companion_path(report: &Path, suffix: &str) -> PathBuf {
    let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    report.with_file_name(format!("{stem}_{suffix}"))
}

pub fn cmd_eval(
    checkpoint: &Path,
    sets_dir: &Path,
    report: &Path,
    expected: Option<&ModelConfig>,
    threshold: f64,
) -> Result<EvalReport> {
    let params = ModelParams::load(checkpoint)?;
    if let Some(cfg) = expected {
        if *cfg != params.config {
            return Err(PincError::CheckpointShape(format!(
                "checkpoint was trained with {:?}, the configuration asks for {:?}",
                params.config, cfg
            )));
        }
    }
    let sets = read_eval_sets(sets_dir)?;
    write_report(&params, &sets, report, threshold)
}

// ----- plot-data ------------------------------------------------------------------

pub fn cmd_plot_data(checkpoint: &Path, data: &Path, out: &Path, max_traj: Option<usize>) -> Result<()> {
    let params = ModelParams::load(checkpoint)?;
    let dataset = read_dataset(data)?;
    let n = max_traj.unwrap_or(dataset.len()).min(dataset.len());
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, prediction_csv(&params, &dataset.trajectories[..n]))?;
    Ok(())
}

// ----- grid -----------------------------------------------------------------------

/// Ablation grid file.
///
/// `train`, `dev` and `sets` name dataset directories, or dataset preset
/// files (`.toml`) that are generated once into `<out>/data`. For `sets`, a
/// table with `dev`, `interp` and `extrap` entries is also accepted. Cells
/// are the cartesian product of `[axes]` plus every `[[cells]]` entry;
/// keys are dotted `RunConfig` paths such as `model.hidden_width`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub base: Option<PathBuf>,
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub sets: Option<SetsSpec>,
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default)]
    pub cells: Vec<GridCell>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SetsSpec {
    Dir(PathBuf),
    Presets { dev: PathBuf, interp: PathBuf, extrap: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub name: String,
    #[serde(default)]
    pub set: BTreeMap<String, toml::Value>,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(a) => a.iter().map(value_label).collect::<Vec<_>>().join("+"),
        other => other.to_string(),
    }
}

/// Expands the grid into named override sets.
pub fn grid_cells(grid: &GridFile) -> Vec<(String, Vec<(String, toml::Value)>)> {
    let mut cells: Vec<(String, Vec<(String, toml::Value)>)> = Vec::new();
    if !grid.axes.is_empty() {
        let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for (key, values) in &grid.axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        for c in combos {
            let name = c
                .iter()
                .map(|(k, v)| format!("{}={}", k.rsplit('.').next().unwrap_or(k), value_label(v)))
                .collect::<Vec<_>>()
                .join("_");
            cells.push((name, c));
        }
    }
    for cell in &grid.cells {
        cells.push((cell.name.clone(), cell.set.iter().map(|(k, v)| (k.clone(), v.clone())).collect()));
    }
    cells
}

fn resolve_dataset(spec: &Path, grid_dir: &Path, out: &Path) -> Result<Dataset> {
    let path = if spec.is_relative() { grid_dir.join(spec) } else { spec.to_path_buf() };
    if path.extension().is_some_and(|e| e == "toml") {
        let config = load_generation_config(&path)?;
        let dir = out.join("data").join(&config.name);
        let dataset = generate_dataset(&config)?;
        write_dataset(&dataset, &dir)?;
        Ok(dataset)
    } else {
        read_dataset(&path)
    }
}

/// Summary row of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub cell: String,
    pub status: String,
    pub report: Option<EvalReport>,
}

pub fn grid_summary_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("cell,status,L1,L2,L3,L4,L5,VPT1,VPT2,VPT3\n");
    for r in rows {
        let _ = write!(out, "{},{}", r.cell, r.status.replace([',', '\n'], ";"));
        match &r.report {
            Some(rep) => {
                let _ = writeln!(
                    out,
                    ",{},{},{},{},{},{},{},{}",
                    rep.l1, rep.l2, rep.l3, rep.l4, rep.l5, rep.vpt1.mean_s, rep.vpt2.mean_s, rep.vpt3.mean_s
                );
            }
            None => out.push_str(",,,,,,,,\n"),
        }
    }
    out
}

pub fn cmd_grid(grid_path: &Path, out: &Path, force: bool) -> Result<Vec<GridRow>> {
    let grid: GridFile = parse_toml(&read_text(grid_path)?, grid_path)?;
    let grid_dir = grid_path.parent().unwrap_or(Path::new("."));
    let base = match &grid.base {
        Some(p) => RunConfig::load(&if p.is_relative() { grid_dir.join(p) } else { p.clone() })?,
        None => RunConfig::default(),
    };
    let base = TrainOverrides::default().apply(base)?;
    let cells = grid_cells(&grid);
    // resolve every override up front so a typo fails before any training
    let mut runs = Vec::with_capacity(cells.len());
    for (name, overrides) in &cells {
        let mut run = base.clone();
        for (k, v) in overrides {
            run = run.with_override(k, v.clone())?;
        }
        runs.push((name.clone(), run));
    }
    prepare_out_dir(out, force)?;
    fs::write(
        out.join("grid_echo.json"),
        serde_json::to_string_pretty(&runs.iter().map(|(n, r)| (n.clone(), r.clone())).collect::<BTreeMap<_, _>>())?,
    )?;
    let train = resolve_dataset(&grid.train, grid_dir, out)?;
    let dev = grid.dev.as_ref().map(|d| resolve_dataset(d, grid_dir, out)).transpose()?;
    let sets = match &grid.sets {
        None => None,
        Some(SetsSpec::Dir(d)) => {
            Some(read_eval_sets(&if d.is_relative() { grid_dir.join(d) } else { d.clone() })?)
        }
        Some(SetsSpec::Presets { dev, interp, extrap }) => Some(EvalSets {
            dev: resolve_dataset(dev, grid_dir, out)?,
            interp: resolve_dataset(interp, grid_dir, out)?,
            extrap: resolve_dataset(extrap, grid_dir, out)?,
        }),
    };
    let threshold = grid.threshold.unwrap_or(VPT_THRESHOLD);
    let mut rows = Vec::with_capacity(runs.len());
    for (name, run) in &runs {
        let dir = out.join(name);
        let result = run_training(run, &train, dev.as_ref(), &dir).and_then(|o| match &sets {
            Some(s) => write_report(&o.params, s, &dir.join("report.json"), threshold).map(Some),
            None => Ok(None),
        });
        let row = match result {
            Ok(report) => GridRow { cell: name.clone(), status: "ok".into(), report },
            Err(e) => GridRow { cell: name.clone(), status: format!("failed: {e}"), report: None },
        };
        rows.push(row);
        fs::write(out.join("summary.csv"), grid_summary_csv(&rows))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_partial_tables() {
        let text = "colloc = 2\n[model]\nhidden_width = 16\nactivation = \"tanh\"\n[train]\nlosses = [\"data\", \"phy\"]\n[train.weights]\nw_phy = 0.25\n";
        let run = RunConfig::from_toml_str(text, Path::new("x.toml")).unwrap();
        assert_eq!(run.colloc, Some(2));
        assert_eq!(run.model.hidden_width, 16);
        assert_eq!(run.model.hidden_layers, 4);
        assert_eq!(run.train.weights.w_phy, 0.25);
        assert_eq!(run.train.weights.w_data, 1.0);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml_str("[train]\nlearning_rate = 1.0\n", Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = RunConfig::default().with_override("model.widht", toml::Value::Integer(3)).unwrap_err();
        assert!(err.to_string().contains("widht"), "{err}");
    }

    #[test]
    fn overrides_apply_in_order() {
        let run = RunConfig::default().with_override("model.hidden_width", toml::Value::Integer(8)).unwrap();
        assert_eq!(run.model.hidden_width, 8);
        let o = TrainOverrides {
            losses: Some("data".into()),
            ablate_residual: true,
            batch: Some(3),
            ..Default::default()
        };
        let run = o.apply(run).unwrap();
        assert!(!run.model.residual_connection);
        assert_eq!(run.train.n_batch, 3);
        assert_eq!(run.train.losses, vec![crate::losses::LossKind::Data]);
    }

    #[test]
    fn grid_expansion() {
        let text = r#"
            train = "data/train"
            [axes]
            "model.activation" = ["tanh", "softplus"]
            "train.grad_scheme" = ["config", "norm"]
            [[cells]]
            name = "no_residual"
            set = { "model.residual_connection" = false }
        "#;
        let grid: GridFile = toml::from_str(text).unwrap();
        let cells = grid_cells(&grid);
        assert_eq!(cells.len(), 5);
        assert_eq!(cells[0].0, "activation=tanh_grad_scheme=config");
        assert_eq!(cells[4].0, "no_residual");
    }
}
