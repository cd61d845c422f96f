//! Library-level end-to-end: generate, train, checkpoint through a file,
//! reload, and score — the full path a consumer of the crate walks.

use sitgru::cells::CellKind;
use sitgru::checkpoint;
use sitgru::data::synth::{AnomalyKind, SyntheticConfig};
use sitgru::network::{Model, NetworkConfig};
use sitgru::optim::{self, LossKind, OptimizerKind, TrainConfig};
use sitgru::pipeline;
use sitgru::tensor::ActivationKind;

fn synth(seed: u64, anomaly: AnomalyKind, window: (usize, usize)) -> SyntheticConfig {
    SyntheticConfig {
        height: 16,
        width: 16,
        length: 40,
        object_size: 4,
        speed: 1,
        anomaly,
        window,
        seed,
    }
}

#[test]
fn generate_train_checkpoint_score() {
    let train_cfgs = vec![
        synth(1, AnomalyKind::None, (0, 0)),
        synth(2, AnomalyKind::None, (0, 0)),
    ];
    let test_cfg = synth(3, AnomalyKind::Speed(3), (12, 26));
    let ds = pipeline::synth_dataset(&train_cfgs, &test_cfg, 4, &[1, 2]).unwrap();

    let net = NetworkConfig {
        layer_units: vec![12, 6, 1],
        cell_kind: CellKind::Sitgru,
        inter_activation: ActivationKind::Tanh,
        frame_pixels: 256,
        t_steps: 4,
    };
    let train = TrainConfig {
        epochs: 8,
        batch_size: 8,
        learning_rate: 2e-3,
        seed: 4,
        loss: LossKind::Mse,
        optimizer: OptimizerKind::Adam,
        ..TrainConfig::default()
    };
    let model = Model::new(net, 5).unwrap();
    let (trained, records) = optim::fit(model, &ds.train_cuboids, &train).unwrap();
    assert_eq!(records.len(), 8);
    assert!(records.iter().all(|r| r.seconds > 0.0));
    let best = optim::best_epoch(&records);

    // Through a checkpoint file and back.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &trained, Some(best), Some(&ds.stats)).unwrap();
    let (reloaded, loaded_best, loaded_stats) = checkpoint::load(&path).unwrap();
    assert_eq!(reloaded, trained);
    assert_eq!(loaded_best, Some(best));
    let loaded_stats = loaded_stats.unwrap();
    assert_eq!(loaded_stats.range, ds.stats.range);

    // Scoring with the reloaded model reproduces the original bit for bit.
    let a = pipeline::score_video(&trained, &ds.test_cuboids, 40, 8).unwrap();
    let b = pipeline::score_video(&reloaded, &ds.test_cuboids, 40, 8).unwrap();
    for (x, y) in a.scores.iter().zip(&b.scores) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    let (points, auc, eer) = sitgru::eval::roc_auc_eer(&a.scores, &ds.test_labels).unwrap();
    assert!(points.len() >= 3);
    assert!((0.0..=1.0).contains(&auc));
    assert!((0.0..=1.0).contains(&eer));
}

#[test]
fn stride_augmentation_multiplies_cuboids() {
    let train_cfgs = vec![synth(1, AnomalyKind::None, (0, 0))];
    let test_cfg = synth(3, AnomalyKind::Speed(3), (12, 26));
    let single = pipeline::synth_dataset(&train_cfgs, &test_cfg, 4, &[1]).unwrap();
    let augmented = pipeline::synth_dataset(&train_cfgs, &test_cfg, 4, &[1, 2, 3]).unwrap();
    // L - (T-1)s cuboids per stride: 37 + 34 + 31.
    assert_eq!(single.train_cuboids.len(), 37);
    assert_eq!(augmented.train_cuboids.len(), 37 + 34 + 31);
}
