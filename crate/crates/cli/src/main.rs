//! Command line interface for the recurrent anomaly-scoring toolkit.
//!
//! Subcommands: train, eval, gradcheck, bench, sweep, synth. Configuration
//! precedence is flags > config file > defaults; `SITGRU_THREADS` caps the
//! worker pool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sitgru::cells::CellKind;
use sitgru::optim::{LossKind, OptimizerKind};

use config::{parse_window, Overrides, RunConfig};

/// Exit codes: 0 success, 1 usage error, 2 data/IO error, 3 verification
/// failure.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError { code: 1, message }
    }
    pub fn data(message: String) -> Self {
        CliError { code: 2, message }
    }
    pub fn verification(message: String) -> Self {
        CliError { code: 3, message }
    }
}

fn cell_parser(s: &str) -> Result<CellKind, String> {
    CellKind::parse(s).map_err(|e| e.to_string())
}

fn loss_parser(s: &str) -> Result<LossKind, String> {
    LossKind::parse(s).map_err(|e| e.to_string())
}

fn opt_parser(s: &str) -> Result<OptimizerKind, String> {
    OptimizerKind::parse(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; all randomness derives from it through named streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recurrent cell variant.
    #[arg(long, value_parser = cell_parser,
          help = "Cell: gru|sitgru|sitgru_tanh|sitgru_relu|gru_no_update|lstm")]
    cell: Option<CellKind>,
    /// Reconstruction loss (mse|xent).
    #[arg(long, value_parser = loss_parser)]
    loss: Option<LossKind>,
    /// Optimizer (adam|adagrad|rmsprop|sgd).
    #[arg(long, value_parser = opt_parser)]
    opt: Option<OptimizerKind>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Square frame edge after preprocessing.
    #[arg(long = "frame-size")]
    frame_size: Option<usize>,
    /// Timesteps per cuboid.
    #[arg(long = "t")]
    t_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Training fraction of the train/validation split.
    #[arg(long)]
    split: Option<f64>,
    /// Temporal augmentation strides, comma separated.
    #[arg(long, value_delimiter = ',')]
    strides: Option<Vec<usize>>,
    /// Layer sizes, comma separated; the last must be 1.
    #[arg(long, value_delimiter = ',')]
    units: Option<Vec<usize>>,
    /// Synthetic video length.
    #[arg(long = "synth-len")]
    synth_len: Option<usize>,
    /// Synthetic object edge length.
    #[arg(long = "synth-object")]
    synth_object: Option<usize>,
    /// Normal object speed (px/frame).
    #[arg(long = "synth-speed")]
    synth_speed: Option<usize>,
    /// Number of synthetic training videos.
    #[arg(long = "synth-videos")]
    synth_videos: Option<usize>,
    /// Anomaly kind for generated test data (none|speed|extra_object).
    #[arg(long = "synth-anomaly")]
    synth_anomaly: Option<String>,
    /// Speed multiplier for the speed anomaly.
    #[arg(long = "synth-k")]
    synth_k: Option<u32>,
    /// Anomaly window start:end (half open).
    #[arg(long, value_parser = parse_window)]
    window: Option<(usize, usize)>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            cell: self.cell,
            loss: self.loss,
            opt: self.opt,
            lr: self.lr,
            frame_size: self.frame_size,
            t_steps: self.t_steps,
            epochs: self.epochs,
            batch: self.batch,
            split: self.split,
            strides: self.strides.clone(),
            units: self.units.clone(),
            synth_len: self.synth_len,
            synth_object: self.synth_object,
            synth_speed: self.synth_speed,
            synth_videos: self.synth_videos,
            synth_anomaly: self.synth_anomaly.clone(),
            synth_k: self.synth_k,
            window: self.window,
            ..Overrides::default()
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sitgru", version, about = "Recurrent video-frame anomaly scoring toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus per-epoch records.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Training manifest(s), one video per manifest (repeatable).
        #[arg(long)]
        data: Vec<PathBuf>,
        /// Generate synthetic training data instead ("default").
        #[arg(long)]
        synth: Option<String>,
    },
    /// Score a test video against a checkpoint.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test manifest with per-frame labels.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Emit SVG charts of the regularity curve and ROC.
        #[arg(long)]
        svg: bool,
        /// Dump per-frame residual heatmaps as PGM.
        #[arg(long)]
        heatmaps: bool,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Cell kinds to check, comma separated (default: all).
        #[arg(long, value_delimiter = ',', value_parser = cell_parser)]
        kinds: Option<Vec<CellKind>>,
        /// Random draws per kind.
        #[arg(long)]
        checks: Option<usize>,
        /// Flip one analytic gradient sign to prove the harness catches it.
        #[arg(long, hide = true)]
        sabotage: bool,
    },
    /// Compare per-epoch training time across cell kinds.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Training repetitions to aggregate.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Train the loss x optimizer grid and pick the best pair by AUC.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate a synthetic dataset directory (PGM frames + manifest).
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn resolve(
    common: &CommonArgs,
    extra: Overrides,
    default_epochs: usize,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::defaults(default_epochs);
    if let Some(path) = &common.config {
        let file = config::read_config_file(path)?;
        cfg.apply(&file);
    }
    cfg.apply(&common.overrides());
    cfg.apply(&extra);
    Ok(cfg)
}

fn run() -> Result<(), CliError> {
    sitgru::parallel::init_thread_cap();
    let cli = Cli::parse();
    match &cli.command {
        Command::Train { common, data, synth } => {
            let extra = Overrides {
                data: (!data.is_empty()).then(|| data.clone()),
                synth: synth.clone(),
                ..Overrides::default()
            };
            let cfg = resolve(common, extra, 60)?;
            commands::cmd_train(&cfg)
        }
        Command::Eval { common, checkpoint, data, svg, heatmaps } => {
            let extra = Overrides {
                checkpoint: checkpoint.clone(),
                data: data.clone().map(|d| vec![d]),
                svg: (*svg).then_some(true),
                heatmaps: (*heatmaps).then_some(true),
                ..Overrides::default()
            };
            let cfg = resolve(common, extra, 60)?;
            commands::cmd_eval(&cfg)
        }
        Command::Gradcheck { common, kinds, checks, sabotage } => {
            let extra = Overrides {
                kinds: kinds.clone(),
                checks: *checks,
                ..Overrides::default()
            };
            let cfg = resolve(common, extra, 60)?;
            commands::cmd_gradcheck(&cfg, *sabotage)
        }
        Command::Bench { common, reps } => {
            let extra = Overrides {
                reps: *reps,
                ..Overrides::default()
            };
            let cfg = resolve(common, extra, 5)?;
            commands::cmd_bench(&cfg)
        }
        Command::Sweep { common } => {
            let cfg = resolve(common, Overrides::default(), 60)?;
            commands::cmd_sweep(&cfg)
        }
        Command::Synth { common } => {
            let cfg = resolve(common, Overrides::default(), 60)?;
            commands::cmd_synth(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
