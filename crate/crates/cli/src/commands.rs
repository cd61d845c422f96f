//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sitgru::cells::CellKind;
use sitgru::checkpoint::{self, PipelineStats};
use sitgru::data::manifest::{self, ManifestEntry};
use sitgru::data::pgm;
use sitgru::data::synth::{self, AnomalyKind};
use sitgru::data::FrameSequence;
use sitgru::error::Error;
use sitgru::eval::{self, RocPoint};
use sitgru::gradcheck::{self, GRAD_TOLERANCE};
use sitgru::network::Model;
use sitgru::optim::{self, EpochRecord, LossKind, OptimizerKind};
use sitgru::pipeline::{self, ScoredVideo};
use sitgru::seed;
use sitgru::svg;

use crate::config::RunConfig;
use crate::CliError;

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::data(format!("{}: {e}", cfg.out.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Every command records the resolved configuration, seed and tool version,
/// which is sufficient to replay the run bit for bit.
fn write_run_manifest(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    let manifest = serde_json::json!({
        "tool": "sitgru",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
    });
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::data(e.to_string()))?;
    write_text(&cfg.out.join("run_manifest.json"), &(text + "\n"))
}

/// Training videos: either every `--data` manifest (one video per manifest)
/// or synthetic normal sequences when `--synth` is given.
fn training_videos(cfg: &RunConfig) -> Result<Vec<FrameSequence>, CliError> {
    if !cfg.data.is_empty() {
        let mut videos = Vec::new();
        for path in &cfg.data {
            let (seq, _) = manifest::load_frames(path)?;
            if seq.is_empty() {
                return Err(CliError::usage(format!(
                    "{}: manifest names no frames",
                    path.display()
                )));
            }
            videos.push(seq);
        }
        return Ok(videos);
    }
    match cfg.synth.as_deref() {
        Some("default") => {
            let videos = (0..cfg.synth_videos.max(1))
                .map(|i| {
                    let scfg = cfg.synth_config(
                        AnomalyKind::None,
                        seed::derive(cfg.seed, &format!("synth.train.{i}")),
                    );
                    synth::generate(&scfg).map(|(seq, _)| seq)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(videos)
        }
        Some(other) => Err(CliError::usage(format!("unknown synth preset '{other}'"))),
        None => Err(CliError::usage(
            "train needs training data: pass --data MANIFEST or --synth default".into(),
        )),
    }
}

fn write_epochs_csv(path: &Path, records: &[EpochRecord]) -> Result<(), CliError> {
    let mut text = String::from(EpochRecord::CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    write_run_manifest(cfg, "train")?;

    let videos = training_videos(cfg)?;
    let (cuboids, stats) = pipeline::prepare_training(
        &videos,
        (cfg.frame_size, cfg.frame_size),
        cfg.t_steps,
        &cfg.strides,
    )?;

    let net = cfg.network_config();
    net.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let train = cfg.train_config();
    train.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let model = Model::new(net, cfg.seed)?;
    let started = Instant::now();
    let (best_model, records) = optim::fit(model, &cuboids, &train)?;
    let best = optim::best_epoch(&records);

    write_epochs_csv(&cfg.out.join("epochs.csv"), &records)?;
    checkpoint::save(
        &cfg.out.join("model.ckpt"),
        &best_model,
        Some(best),
        Some(&stats),
    )?;

    println!(
        "trained {} on {} cuboids for {} epochs in {:.1}s; best epoch {} (val loss {})",
        cfg.cell,
        cuboids.len(),
        records.len(),
        started.elapsed().as_secs_f64(),
        best,
        records[best].val_loss
    );
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> Result<(Model, Option<usize>, PipelineStats), CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::usage("--checkpoint is required".into()))?;
    let (model, best, stats) = checkpoint::load(path)?;
    let stats = stats.ok_or_else(|| {
        CliError::data(format!(
            "{}: checkpoint carries no preprocessing statistics",
            path.display()
        ))
    })?;
    Ok((model, best, stats))
}

fn scores_csv(scored: &ScoredVideo, labels: &[u8]) -> String {
    let mut text = String::from("frame,error,regularity,label,score\n");
    for (i, ((err, reg), score)) in scored
        .frame_errors
        .iter()
        .zip(&scored.regularity)
        .zip(&scored.scores)
        .enumerate()
    {
        text.push_str(&format!("{i},{err},{reg},{},{score}\n", labels[i]));
    }
    text
}

fn roc_csv(points: &[RocPoint]) -> String {
    let mut text = String::from("threshold,fpr,tpr\n");
    for p in points {
        text.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    text
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    write_run_manifest(cfg, "eval")?;

    let (model, best_epoch, stats) = load_checkpoint(cfg)?;
    let expected = stats.frame_height * stats.frame_width;
    if model.config.frame_pixels != expected {
        return Err(CliError::data(format!(
            "checkpoint is incompatible: model expects {} pixels but its statistics describe {}x{}",
            model.config.frame_pixels, stats.frame_height, stats.frame_width
        )));
    }

    let manifest_path = cfg
        .data
        .first()
        .ok_or_else(|| CliError::usage("eval needs --data MANIFEST".into()))?;
    let (frames, labels) = manifest::load_frames(manifest_path)?;
    if frames.is_empty() {
        return Err(CliError::usage(format!(
            "{}: manifest names no frames",
            manifest_path.display()
        )));
    }

    let started = Instant::now();
    let (cuboids, conditioned) = pipeline::prepare_eval(&frames, &stats, model.config.t_steps)?;
    let scored = pipeline::score_video(&model, &cuboids, frames.len(), cfg.batch)?;
    let (points, auc, eer) = eval::roc_auc_eer(&scored.scores, &labels)?;
    let seconds = started.elapsed().as_secs_f64();

    write_text(&cfg.out.join("scores.csv"), &scores_csv(&scored, &labels))?;
    write_text(&cfg.out.join("roc.csv"), &roc_csv(&points))?;
    let mean_regularity =
        scored.regularity.iter().sum::<f64>() / scored.regularity.len() as f64;
    let summary = serde_json::json!({
        "auc": auc,
        "eer": eer,
        "frames": frames.len(),
        "mean_regularity": mean_regularity,
        "best_epoch": best_epoch,
        "eval_seconds": seconds,
    });
    write_text(
        &cfg.out.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).unwrap() + "\n"),
    )?;

    if cfg.svg {
        let reg_points: Vec<(f64, f64)> = scored
            .regularity
            .iter()
            .enumerate()
            .map(|(i, &r)| (i as f64, r))
            .collect();
        let label_points: Vec<(f64, f64)> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (i as f64, f64::from(l)))
            .collect();
        write_text(
            &cfg.out.join("regularity.svg"),
            &svg::line_chart(
                "regularity score per frame",
                &[
                    ("regularity", "#2266cc", reg_points),
                    ("label", "#cc3322", label_points),
                ],
                640,
                360,
            ),
        )?;
        let roc_points: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
        write_text(
            &cfg.out.join("roc.svg"),
            &svg::line_chart(
                "ROC",
                &[
                    ("tpr", "#2266cc", roc_points),
                    ("chance", "#999999", vec![(0.0, 0.0), (1.0, 1.0)]),
                ],
                420,
                420,
            ),
        )?;
    }

    if cfg.heatmaps {
        let dir = cfg.out.join("heatmaps");
        fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let recons = pipeline::reconstruct_frames(
            &model,
            &cuboids,
            frames.len(),
            (stats.frame_height, stats.frame_width),
        )?;
        for (i, (frame, recon)) in conditioned.frames.iter().zip(&recons).enumerate() {
            let map = eval::residual_heatmap(frame, recon)?;
            pgm::write_pgm(&dir.join(format!("{i:05}.pgm")), &map.scale(255.0))?;
        }
    }

    println!("evaluated {} frames: AUC {auc:.4} EER {eer:.4}", frames.len());
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig, sabotage: bool) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    write_run_manifest(cfg, "gradcheck")?;

    let seeds: Vec<u64> = (0..cfg.checks as u64)
        .map(|i| seed::derive(cfg.seed, &format!("gradcheck.{i}")))
        .collect();
    let reports = gradcheck::run(&cfg.kinds, &seeds, sabotage)?;
    let mut failed = false;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<14} cell {:.3e}  network {:.3e}  (tolerance {GRAD_TOLERANCE:.0e})",
            r.kind.to_string(),
            r.worst_cell,
            r.worst_network
        );
        failed |= !r.passed();
    }
    if failed {
        return Err(CliError::verification("gradient check failed".into()));
    }
    Ok(())
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    write_run_manifest(cfg, "bench")?;

    let videos = (0..cfg.synth_videos.max(1))
        .map(|i| {
            let scfg = cfg.synth_config(
                AnomalyKind::None,
                seed::derive(cfg.seed, &format!("synth.train.{i}")),
            );
            synth::generate(&scfg).map(|(seq, _)| seq)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (cuboids, _) = pipeline::prepare_training(
        &videos,
        (cfg.frame_size, cfg.frame_size),
        cfg.t_steps,
        &cfg.strides,
    )?;

    let kinds = [CellKind::Sitgru, CellKind::Gru, CellKind::Lstm];
    let net = cfg.network_config();
    let train = cfg.train_config();

    // Aggregate per-epoch seconds across repetitions.
    let mut all: Vec<(CellKind, Vec<f64>)> = kinds.iter().map(|&k| (k, Vec::new())).collect();
    for _ in 0..cfg.reps.max(1) {
        let timings = pipeline::bench_kinds(&kinds, &cuboids, &net, &train, cfg.seed)?;
        for (slot, t) in all.iter_mut().zip(&timings) {
            slot.1.extend(t.records.iter().map(|r| r.seconds));
        }
    }

    let mut text = String::from("kind,min_s,max_s,median_s\n");
    let mut medians = Vec::new();
    for (kind, mut secs) in all {
        secs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let min = secs[0];
        let max = secs[secs.len() - 1];
        let median = if secs.len() % 2 == 1 {
            secs[secs.len() / 2]
        } else {
            (secs[secs.len() / 2 - 1] + secs[secs.len() / 2]) / 2.0
        };
        text.push_str(&format!("{kind},{min},{max},{median}\n"));
        println!("{kind:<8} min {min:.4}s  max {max:.4}s  median {median:.4}s");
        medians.push((kind, median));
    }
    write_text(&cfg.out.join("timing.csv"), &text)?;

    let ordered = medians[0].1 < medians[1].1 && medians[1].1 < medians[2].1;
    println!(
        "median per-epoch ordering sitgru < gru < lstm: {}",
        if ordered { "holds" } else { "violated" }
    );
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    write_run_manifest(cfg, "sweep")?;

    let train_cfgs: Vec<_> = (0..cfg.synth_videos.max(1))
        .map(|i| {
            cfg.synth_config(
                AnomalyKind::None,
                seed::derive(cfg.seed, &format!("synth.train.{i}")),
            )
        })
        .collect();
    let test_cfg = cfg.synth_config(cfg.anomaly_or_speed3()?, seed::derive(cfg.seed, "synth.test"));
    let ds = pipeline::synth_dataset(&train_cfgs, &test_cfg, cfg.t_steps, &cfg.strides)?;

    let grid = [
        (LossKind::Mse, OptimizerKind::Adagrad),
        (LossKind::Mse, OptimizerKind::Adam),
        (LossKind::Mse, OptimizerKind::Rmsprop),
        (LossKind::Xent, OptimizerKind::Adagrad),
        (LossKind::Xent, OptimizerKind::Adam),
        (LossKind::Xent, OptimizerKind::Rmsprop),
    ];
    let net = cfg.network_config();
    let base_train = cfg.train_config();
    let result = eval::sweep_loss_optimizer(&grid, |loss, opt| {
        let mut train = base_train.clone();
        train.loss = loss;
        train.optimizer = opt;
        pipeline::run_synth_cell(&ds, &net, &train, cfg.seed)
    })?;

    let mut text = String::from("loss,optimizer,auc,eer,status\n");
    for cell in &result.cells {
        match &cell.outcome {
            Ok((auc, eer)) => {
                text.push_str(&format!(
                    "{},{},{auc},{eer},ok\n",
                    cell.loss.as_str(),
                    cell.optimizer.as_str()
                ));
                println!(
                    "{:<5} {:<8} AUC {auc:.4} EER {eer:.4}",
                    cell.loss.as_str(),
                    cell.optimizer.as_str()
                );
            }
            Err(msg) => {
                text.push_str(&format!(
                    "{},{},,,failed\n",
                    cell.loss.as_str(),
                    cell.optimizer.as_str()
                ));
                println!(
                    "{:<5} {:<8} failed: {msg}",
                    cell.loss.as_str(),
                    cell.optimizer.as_str()
                );
            }
        }
    }
    if let Some(best) = result.best_cell() {
        text.push_str(&format!(
            "best={},{}\n",
            best.loss.as_str(),
            best.optimizer.as_str()
        ));
        println!("best: {} with {}", best.loss.as_str(), best.optimizer.as_str());
    }
    write_text(&cfg.out.join("sweep.csv"), &text)?;
    Ok(())
}

impl RunConfig {
    /// Sweep and synth default to the speed-anomaly benchmark when the
    /// config still says `none`.
    pub fn anomaly_or_speed3(&self) -> Result<AnomalyKind, CliError> {
        match self.anomaly()? {
            AnomalyKind::None => Ok(AnomalyKind::Speed(self.synth_k.max(1))),
            other => Ok(other),
        }
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    write_run_manifest(cfg, "synth")?;

    let scfg = cfg.synth_config(cfg.anomaly()?, cfg.seed);
    let (seq, labels) = synth::generate(&scfg)?;
    let mut entries = Vec::with_capacity(seq.len());
    for (i, (frame, &label)) in seq.frames.iter().zip(&labels).enumerate() {
        let name = format!("{i:05}.pgm");
        pgm::write_pgm(&cfg.out.join(&name), frame)?;
        entries.push(ManifestEntry {
            path: PathBuf::from(name),
            label,
        });
    }
    manifest::write_manifest(&cfg.out.join("manifest.jsonl"), &entries)?;
    println!(
        "wrote {} frames ({} anomalous) to {}",
        seq.len(),
        labels.iter().filter(|&&l| l == 1).count(),
        cfg.out.display()
    );
    Ok(())
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::data(e.to_string())
    }
}
