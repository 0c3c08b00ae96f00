use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pinc::eval::VPT_THRESHOLD;
use pinc::experiment::{self, GenerateOptions, RunConfig, TrainOverrides};

#[derive(Parser)]
#[command(name = "pinc", version, about = "Physics-informed neural network with control for underwater vehicle dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a preset file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of data,phy,ic,roll,phy_roll.
        #[arg(long)]
        losses: Option<String>,
        /// sum, config or norm.
        #[arg(long)]
        grad: Option<String>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        colloc: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        activation: Option<String>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        ablate_residual: bool,
        #[arg(long)]
        no_scheduler: bool,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on dev, interpolation and extrapolation sets.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding dev/, test_interp/ and test_extrap/.
        #[arg(long)]
        sets: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Training config the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = VPT_THRESHOLD)]
        threshold: f64,
    },
    /// Train and evaluate every cell of an ablation grid.
    Grid {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Write predicted and true trajectories as CSV for plotting.
    PlotData {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_traj: Option<usize>,
    },
}

fn run(command: Command) -> pinc::Result<()> {
    match command {
        Command::Generate { config, out, seed, n_traj, force } => {
            let ds = experiment::cmd_generate(&config, &out, &GenerateOptions { seed, n_traj, force })?;
            println!("wrote {} trajectories to {}", ds.len(), out.display());
        }
        Command::Train {
            config,
            data,
            dev,
            out,
            losses,
            grad,
            batch,
            colloc,
            epochs,
            lr,
            seed,
            noise_sigma,
            activation,
            layers,
            width,
            ablate_residual,
            no_scheduler,
            force,
        } => {
            let overrides = TrainOverrides {
                losses,
                grad,
                batch,
                colloc,
                epochs,
                lr0: lr,
                seed,
                noise_sigma,
                activation,
                hidden_layers: layers,
                hidden_width: width,
                ablate_residual,
                no_scheduler,
            };
            let output = experiment::cmd_train(config.as_deref(), &data, dev.as_deref(), &out, &overrides, force)?;
            if let Some(v) = output.history.final_log10_dev() {
                println!("final log10 dev loss {v:.3}");
            }
            println!("checkpoint written to {}", out.join("model_final.json").display());
        }
        Command::Eval { checkpoint, sets, report, config, threshold } => {
            let expected = config.map(|p| RunConfig::load(&p)).transpose()?.map(|r| r.model);
            let rep = experiment::cmd_eval(&checkpoint, &sets, &report, expected.as_ref(), threshold)?;
            println!(
                "L1 {:.3}  L2 {:.3}  L3 {:.3}  L4 {:.3}  L5 {:.3}",
                rep.l1, rep.l2, rep.l3, rep.l4, rep.l5
            );
            println!(
                "VPT dev {:.3} s  interp {:.3} s  extrap {:.3} s",
                rep.vpt1.mean_s, rep.vpt2.mean_s, rep.vpt3.mean_s
            );
        }
        Command::Grid { grid, out, force } => {
            let rows = experiment::cmd_grid(&grid, &out, force)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("{} cells, {} failed; summary in {}", rows.len(), failed, out.join("summary.csv").display());
        }
        Command::PlotData { checkpoint, data, out, max_traj } => {
            experiment::cmd_plot_data(&checkpoint, &data, &out, max_traj)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
