//! End-to-end glue: frames to cuboids to training to per-frame scores.
//!
//! Training targets must live in the unit interval because both the final
//! sigmoid and the cross-entropy loss live there, so after the standard
//! preprocessing chain (resize, [0,1] scaling, mean-image subtraction,
//! standardization) the pipeline fits an affine range map on the training
//! frames and applies it to everything the network sees. The map's target
//! band is [0.5, 1.0]: the output stage (shared per-pixel cell behind a
//! sigmoid) cannot emit values below 0.5, and placing the data's lower tail
//! at that floor keeps the background representable instead of forcing a
//! constant-output optimum.

use crate::checkpoint::PipelineStats;
use crate::data::synth::{self, SyntheticConfig};
use crate::data::{build_cuboids, preprocess, Cuboid, FrameSequence, ValueRange};
use crate::error::{Error, Result};
use crate::eval::{self, RocPoint};
use crate::network::{Model, NetworkConfig};
use crate::optim::{self, EpochRecord, TrainConfig};
use crate::parallel;
use crate::tensor::Tensor;
use crate::CellKind;

/// Interval the conditioned pixel values occupy; see the module docs.
pub const TARGET_RANGE: (f64, f64) = (0.5, 1.0);

/// Preprocess training videos (fitting the statistics on them), fit the
/// unit-range map, and build stride-augmented cuboids per video. Cuboids
/// never span video boundaries.
pub fn prepare_training(
    videos: &[FrameSequence],
    target: (usize, usize),
    t_steps: usize,
    strides: &[usize],
) -> Result<(Vec<Tensor>, PipelineStats)> {
    if videos.is_empty() || videos.iter().any(|v| v.is_empty()) {
        return Err(Error::Argument("no training frames".into()));
    }
    let combined = FrameSequence::new(
        videos
            .iter()
            .flat_map(|v| v.frames.iter().cloned())
            .collect(),
    )?;
    let (pre, stats) = preprocess(&combined, None, target)?;
    let range = ValueRange::fit(&pre, TARGET_RANGE)?;
    let ranged = range.apply(&pre);

    let mut cuboids = Vec::new();
    let mut offset = 0;
    for v in videos {
        let frames = ranged.frames[offset..offset + v.len()].to_vec();
        offset += v.len();
        let seq = FrameSequence::new(frames)?;
        for c in build_cuboids(&seq, t_steps, strides)? {
            cuboids.push(c.as_matrix());
        }
    }
    Ok((
        cuboids,
        PipelineStats {
            frame_height: target.0,
            frame_width: target.1,
            preprocess: stats,
            range,
        },
    ))
}

/// Preprocess a test video with frozen training statistics and cut it into
/// stride-1 sliding-window cuboids. Returns the cuboids and the conditioned
/// frames (for residual heatmaps).
pub fn prepare_eval(
    video: &FrameSequence,
    stats: &PipelineStats,
    t_steps: usize,
) -> Result<(Vec<Cuboid>, FrameSequence)> {
    if video.is_empty() {
        return Err(Error::Argument("empty test video".into()));
    }
    let target = (stats.frame_height, stats.frame_width);
    let (pre, _) = preprocess(video, Some(&stats.preprocess), target)?;
    let ranged = stats.range.apply(&pre);
    let cuboids = build_cuboids(&ranged, t_steps, &[1])?;
    Ok((cuboids, ranged))
}

/// Per-frame anomaly scoring of one test video.
#[derive(Debug, Clone)]
pub struct ScoredVideo {
    /// Volume reconstruction cost per cuboid, with its center time.
    pub cuboid_costs: Vec<(f64, f64)>,
    /// Interpolated per-frame reconstruction error.
    pub frame_errors: Vec<f64>,
    /// Regularity curve (1 at the most regular frame).
    pub regularity: Vec<f64>,
    /// Anomaly score per frame: `1 - regularity`, higher is more anomalous.
    pub scores: Vec<f64>,
}

/// Run inference over the cuboids, convert volume costs to per-frame errors
/// (averaging eval-order groups of `batch` before interpolation), and derive
/// the regularity curve and anomaly scores.
pub fn score_video(
    model: &Model,
    cuboids: &[Cuboid],
    frame_count: usize,
    batch: usize,
) -> Result<ScoredVideo> {
    if cuboids.is_empty() {
        return Err(Error::Argument("no cuboids to score".into()));
    }
    let costs = parallel::par_map(cuboids, |c| {
        let input = c.as_matrix();
        let (recon, _) = model.forward_cuboid(&input, false)?;
        Ok::<(f64, f64), Error>((c.center_time(), eval::reconstruction_error(&input, &recon)?))
    });
    let mut cuboid_costs = Vec::with_capacity(costs.len());
    for c in costs {
        cuboid_costs.push(c?);
    }
    let frame_errors = eval::frame_costs_from_cuboids(&cuboid_costs, frame_count, batch)?;
    let regularity = eval::regularity_score(&frame_errors)?;
    let scores = regularity.iter().map(|&r| 1.0 - r).collect();
    Ok(ScoredVideo {
        cuboid_costs,
        frame_errors,
        regularity,
        scores,
    })
}

/// Reconstruction of each frame, taken from the slot of the stride-1 cuboid
/// that starts at the frame (the last cuboid covers the tail).
pub fn reconstruct_frames(
    model: &Model,
    cuboids: &[Cuboid],
    frame_count: usize,
    frame_shape: (usize, usize),
) -> Result<Vec<Tensor>> {
    if cuboids.is_empty() {
        return Err(Error::Argument("no cuboids to reconstruct from".into()));
    }
    let t_steps = cuboids[0].t_steps();
    let recons = parallel::par_map(cuboids, |c| {
        model.forward_cuboid(&c.as_matrix(), false).map(|(r, _)| r)
    });
    let mut recon_mats = Vec::with_capacity(recons.len());
    for r in recons {
        recon_mats.push(r?);
    }
    let (h, w) = frame_shape;
    let mut frames = Vec::with_capacity(frame_count);
    for f in 0..frame_count {
        let start = f.min(cuboids.len() - 1);
        let slot = (f - start).min(t_steps - 1);
        let row = recon_mats[start].row(slot).to_vec();
        frames.push(Tensor::new(vec![h, w], row)?);
    }
    Ok(frames)
}

/// Synthetic train/test bundle for desk-scale runs.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train_cuboids: Vec<Tensor>,
    pub stats: PipelineStats,
    pub test_cuboids: Vec<Cuboid>,
    pub test_frames: FrameSequence,
    pub test_labels: Vec<u8>,
}

/// Generate normal training videos and one anomalous test video from the
/// synthetic renderer, preprocess, and cut cuboids. Training strides default
/// to `[1]` here: temporal stride augmentation makes a stride-s cuboid of
/// normal motion indistinguishable from speed-s motion, which would alias
/// speed anomalies away at this scale.
pub fn synth_dataset(
    train_cfgs: &[SyntheticConfig],
    test_cfg: &SyntheticConfig,
    t_steps: usize,
    strides: &[usize],
) -> Result<SynthDataset> {
    let mut videos = Vec::new();
    for cfg in train_cfgs {
        let (seq, _) = synth::generate(cfg)?;
        videos.push(seq);
    }
    let target = (test_cfg.height, test_cfg.width);
    let (train_cuboids, stats) = prepare_training(&videos, target, t_steps, strides)?;

    let (test_seq, test_labels) = synth::generate(test_cfg)?;
    let (test_cuboids, test_frames) = prepare_eval(&test_seq, &stats, t_steps)?;
    Ok(SynthDataset {
        train_cuboids,
        stats,
        test_cuboids,
        test_frames,
        test_labels,
    })
}

/// Frame-level evaluation of a trained model on the dataset's test video.
pub fn evaluate_on_test(
    model: &Model,
    ds: &SynthDataset,
    batch: usize,
) -> Result<(ScoredVideo, Vec<RocPoint>, f64, f64)> {
    let scored = score_video(model, &ds.test_cuboids, ds.test_labels.len(), batch)?;
    let (points, auc, eer) = eval::roc_auc_eer(&scored.scores, &ds.test_labels)?;
    Ok((scored, points, auc, eer))
}

/// Train one model on the dataset and report frame-level (AUC, EER) on its
/// test video; one sweep grid cell.
pub fn run_synth_cell(
    ds: &SynthDataset,
    net: &NetworkConfig,
    train: &TrainConfig,
    model_seed: u64,
) -> Result<(f64, f64)> {
    let model = Model::new(net.clone(), model_seed)?;
    let (trained, _) = optim::fit(model, &ds.train_cuboids, train)?;
    let (_, _, auc, eer) = evaluate_on_test(&trained, ds, train.batch_size)?;
    Ok((auc, eer))
}

#[derive(Debug, Clone)]
pub struct KindTiming {
    pub kind: CellKind,
    pub min_s: f64,
    pub max_s: f64,
    pub median_s: f64,
    pub records: Vec<EpochRecord>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Train identically-configured models, one per kind, and summarize their
/// per-epoch wall-clock seconds.
pub fn bench_kinds(
    kinds: &[CellKind],
    data: &[Tensor],
    base_net: &NetworkConfig,
    train: &TrainConfig,
    model_seed: u64,
) -> Result<Vec<KindTiming>> {
    let mut out = Vec::new();
    for &kind in kinds {
        let mut net = base_net.clone();
        net.cell_kind = kind;
        let model = Model::new(net, model_seed)?;
        let (_, records) = optim::fit(model, data, train)?;
        let mut secs: Vec<f64> = records.iter().map(|r| r.seconds).collect();
        let min_s = secs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_s = secs.iter().cloned().fold(0.0f64, f64::max);
        let median_s = median(&mut secs);
        out.push(KindTiming {
            kind,
            min_s,
            max_s,
            median_s,
            records,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::AnomalyKind;
    use crate::optim::{LossKind, OptimizerKind};
    use crate::tensor::ActivationKind;

    fn small_net(kind: CellKind, pixels: usize) -> NetworkConfig {
        NetworkConfig {
            layer_units: vec![8, 4, 1],
            cell_kind: kind,
            inter_activation: ActivationKind::Tanh,
            frame_pixels: pixels,
            t_steps: 4,
        }
    }

    fn small_synth(seed: u64, anomaly: AnomalyKind, window: (usize, usize)) -> SyntheticConfig {
        SyntheticConfig {
            height: 12,
            width: 12,
            length: 40,
            object_size: 4,
            speed: 1,
            anomaly,
            window,
            seed,
        }
    }

    fn small_dataset() -> SynthDataset {
        let train = vec![
            small_synth(11, AnomalyKind::None, (0, 0)),
            small_synth(12, AnomalyKind::None, (0, 0)),
        ];
        let test = small_synth(13, AnomalyKind::Speed(3), (12, 26));
        synth_dataset(&train, &test, 4, &[1]).unwrap()
    }

    #[test]
    fn dataset_shapes_line_up() {
        let ds = small_dataset();
        assert_eq!(ds.test_labels.len(), 40);
        assert_eq!(ds.test_cuboids.len(), 40 - 3);
        // Two 40-frame videos, stride 1, T=4.
        assert_eq!(ds.train_cuboids.len(), 2 * 37);
        for c in &ds.train_cuboids {
            assert_eq!(c.shape(), &[4, 144]);
        }
        // Conditioned frames live in [0,1].
        for f in &ds.test_frames.frames {
            assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn scoring_produces_consistent_curves() {
        let ds = small_dataset();
        let model = Model::new(small_net(CellKind::Sitgru, 144), 3).unwrap();
        let scored = score_video(&model, &ds.test_cuboids, ds.test_labels.len(), 8).unwrap();
        assert_eq!(scored.frame_errors.len(), 40);
        assert_eq!(scored.regularity.len(), 40);
        let max_reg = scored.regularity.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max_reg - 1.0).abs() < 1e-12);
        for (s, r) in scored.scores.iter().zip(&scored.regularity) {
            assert!((s + r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn training_video_scores_more_regular_than_anomalous_video() {
        let ds = small_dataset();
        let net = small_net(CellKind::Sitgru, 144);
        let train = TrainConfig {
            epochs: 12,
            batch_size: 8,
            learning_rate: 2e-3,
            seed: 5,
            loss: LossKind::Mse,
            optimizer: OptimizerKind::Adam,
            ..TrainConfig::default()
        };
        let model = Model::new(net, 7).unwrap();
        let (trained, _) = optim::fit(model, &ds.train_cuboids, &train).unwrap();

        // Score the (normal) training video and the anomalous test video on
        // a shared error scale.
        let (train_seq, _) =
            synth::generate(&small_synth(11, AnomalyKind::None, (0, 0))).unwrap();
        let (train_cubs, _) = prepare_eval(&train_seq, &ds.stats, 4).unwrap();
        let normal = score_video(&trained, &train_cubs, 40, 8).unwrap();
        let anomalous = score_video(&trained, &ds.test_cuboids, 40, 8).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&normal.frame_errors) < mean(&anomalous.frame_errors),
            "normal {} vs anomalous {}",
            mean(&normal.frame_errors),
            mean(&anomalous.frame_errors)
        );
    }

    #[test]
    fn reconstruct_frames_covers_every_frame() {
        let ds = small_dataset();
        let model = Model::new(small_net(CellKind::Sitgru, 144), 3).unwrap();
        let frames = reconstruct_frames(&model, &ds.test_cuboids, 40, (12, 12)).unwrap();
        assert_eq!(frames.len(), 40);
        for f in &frames {
            assert_eq!(f.shape(), &[12, 12]);
        }
    }
}
