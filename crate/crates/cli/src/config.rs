//! Run configuration with three precedence levels: built-in defaults, a flat
//! key=value config file, then command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use sitgru::cells::CellKind;
use sitgru::data::synth::{AnomalyKind, SyntheticConfig};
use sitgru::network::NetworkConfig;
use sitgru::optim::{LossKind, OptimizerKind, TrainConfig};
use sitgru::tensor::ActivationKind;

use crate::CliError;

/// Fully resolved configuration for one command invocation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub cell: CellKind,
    pub loss: LossKind,
    pub opt: OptimizerKind,
    pub lr: f64,
    pub frame_size: usize,
    pub t_steps: usize,
    pub epochs: usize,
    pub batch: usize,
    pub split: f64,
    pub strides: Vec<usize>,
    pub units: Vec<usize>,
    pub data: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub synth: Option<String>,
    pub synth_len: usize,
    pub synth_object: usize,
    pub synth_speed: usize,
    pub synth_videos: usize,
    pub synth_anomaly: String,
    pub synth_k: u32,
    pub window: (usize, usize),
    pub svg: bool,
    pub heatmaps: bool,
    pub kinds: Vec<CellKind>,
    pub checks: usize,
    pub reps: usize,
}

impl RunConfig {
    /// Defaults; `epochs` varies per command (training 60, bench 5).
    pub fn defaults(default_epochs: usize) -> Self {
        RunConfig {
            seed: 1,
            out: PathBuf::from("out"),
            cell: CellKind::Sitgru,
            loss: LossKind::Mse,
            opt: OptimizerKind::Adam,
            lr: 1e-5,
            frame_size: 32,
            t_steps: 4,
            epochs: default_epochs,
            batch: 8,
            split: 0.85,
            strides: vec![1, 2, 3],
            units: vec![32, 16, 8, 16, 32, 1],
            data: Vec::new(),
            checkpoint: None,
            synth: None,
            synth_len: 60,
            synth_object: 6,
            synth_speed: 1,
            synth_videos: 2,
            synth_anomaly: "none".into(),
            synth_k: 3,
            window: (20, 40),
            svg: false,
            heatmaps: false,
            kinds: sitgru::cells::ALL_CELL_KINDS.to_vec(),
            checks: 20,
            reps: 1,
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            layer_units: self.units.clone(),
            cell_kind: self.cell,
            inter_activation: ActivationKind::Tanh,
            frame_pixels: self.frame_size * self.frame_size,
            t_steps: self.t_steps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            split: self.split,
            loss: self.loss,
            optimizer: self.opt,
            learning_rate: self.lr,
            seed: self.seed,
            grad_clip: None,
        }
    }

    pub fn anomaly(&self) -> Result<AnomalyKind, CliError> {
        AnomalyKind::parse(&self.synth_anomaly, self.synth_k)
            .map_err(|e| CliError::usage(format!("synth_anomaly: {e}")))
    }

    /// Synthetic-video config at this run's frame size; training videos use
    /// `AnomalyKind::None`, evaluation videos the configured anomaly.
    pub fn synth_config(&self, anomaly: AnomalyKind, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            height: self.frame_size,
            width: self.frame_size,
            length: self.synth_len,
            object_size: self.synth_object,
            speed: self.synth_speed,
            anomaly,
            window: if anomaly == AnomalyKind::None {
                (0, 0)
            } else {
                self.window
            },
            seed,
        }
    }
}

/// One optional value per configurable field; later layers win.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub cell: Option<CellKind>,
    pub loss: Option<LossKind>,
    pub opt: Option<OptimizerKind>,
    pub lr: Option<f64>,
    pub frame_size: Option<usize>,
    pub t_steps: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub split: Option<f64>,
    pub strides: Option<Vec<usize>>,
    pub units: Option<Vec<usize>>,
    pub data: Option<Vec<PathBuf>>,
    pub checkpoint: Option<PathBuf>,
    pub synth: Option<String>,
    pub synth_len: Option<usize>,
    pub synth_object: Option<usize>,
    pub synth_speed: Option<usize>,
    pub synth_videos: Option<usize>,
    pub synth_anomaly: Option<String>,
    pub synth_k: Option<u32>,
    pub window: Option<(usize, usize)>,
    pub svg: Option<bool>,
    pub heatmaps: Option<bool>,
    pub kinds: Option<Vec<CellKind>>,
    pub checks: Option<usize>,
    pub reps: Option<usize>,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &o.$field {
                    self.$field = v.clone();
                }
            };
        }
        take!(seed);
        take!(out);
        take!(cell);
        take!(loss);
        take!(opt);
        take!(lr);
        take!(frame_size);
        take!(t_steps);
        take!(epochs);
        take!(batch);
        take!(split);
        take!(strides);
        take!(units);
        take!(data);
        if o.checkpoint.is_some() {
            self.checkpoint = o.checkpoint.clone();
        }
        if o.synth.is_some() {
            self.synth = o.synth.clone();
        }
        take!(synth_len);
        take!(synth_object);
        take!(synth_speed);
        take!(synth_videos);
        take!(synth_anomaly);
        take!(synth_k);
        take!(window);
        take!(svg);
        take!(heatmaps);
        take!(kinds);
        take!(checks);
        take!(reps);
    }
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect()
}

pub fn parse_kind_list(s: &str) -> Result<Vec<CellKind>, String> {
    s.split(',')
        .map(|p| CellKind::parse(p.trim()).map_err(|e| e.to_string()))
        .collect()
}

/// `start:end` (half-open window).
pub fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| "expected start:end".to_string())?;
    let start = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let end = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    Ok((start, end))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected a boolean, got '{other}'")),
    }
}

/// Parse a flat `key = value` config file (one pair per line, `#` comments).
pub fn read_config_file(path: &PathBuf) -> Result<Overrides, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!(
                "{}: line {}: expected key=value",
                path.display(),
                i + 1
            ))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }

    let mut o = Overrides::default();
    for (key, value) in map {
        let field_err =
            |e: String| CliError::usage(format!("{}: field '{key}': {e}", path.display()));
        match key.as_str() {
            "seed" => o.seed = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "out" => o.out = Some(PathBuf::from(value)),
            "cell" => o.cell = Some(CellKind::parse(&value).map_err(|e| field_err(e.to_string()))?),
            "loss" => o.loss = Some(LossKind::parse(&value).map_err(|e| field_err(e.to_string()))?),
            "opt" => o.opt = Some(OptimizerKind::parse(&value).map_err(|e| field_err(e.to_string()))?),
            "lr" => o.lr = Some(value.parse().map_err(|e: std::num::ParseFloatError| field_err(e.to_string()))?),
            "frame_size" => o.frame_size = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "t" => o.t_steps = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "epochs" => o.epochs = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "batch" => o.batch = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "split" => o.split = Some(value.parse().map_err(|e: std::num::ParseFloatError| field_err(e.to_string()))?),
            "strides" => o.strides = Some(parse_usize_list(&value).map_err(field_err)?),
            "units" => o.units = Some(parse_usize_list(&value).map_err(field_err)?),
            "data" => {
                o.data = Some(value.split(',').map(|p| PathBuf::from(p.trim())).collect())
            }
            "checkpoint" => o.checkpoint = Some(PathBuf::from(value)),
            "synth" => o.synth = Some(value),
            "synth_len" => o.synth_len = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "synth_object" => o.synth_object = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "synth_speed" => o.synth_speed = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "synth_videos" => o.synth_videos = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "synth_anomaly" => o.synth_anomaly = Some(value),
            "synth_k" => o.synth_k = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "window" => o.window = Some(parse_window(&value).map_err(field_err)?),
            "svg" => o.svg = Some(parse_bool(&value).map_err(field_err)?),
            "heatmaps" => o.heatmaps = Some(parse_bool(&value).map_err(field_err)?),
            "kinds" => o.kinds = Some(parse_kind_list(&value).map_err(field_err)?),
            "checks" => o.checks = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            "reps" => o.reps = Some(value.parse().map_err(|e: std::num::ParseIntError| field_err(e.to_string()))?),
            other => {
                return Err(CliError::usage(format!(
                    "{}: unknown config field '{other}'",
                    path.display()
                )))
            }
        }
    }
    Ok(o)
}
