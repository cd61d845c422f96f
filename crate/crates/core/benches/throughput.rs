//! Criterion benches: per-sample work fanned out over the rayon pool versus
//! the same closures run sequentially, plus the per-kind cost of one
//! training minibatch (the timing-trend story at bench resolution).
//!
//! Build with `--no-default-features` to measure a fully sequential core.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sitgru::cells::CellKind;
use sitgru::data::synth::{AnomalyKind, SyntheticConfig};
use sitgru::network::{Model, NetworkConfig};
use sitgru::optim::{loss_value_and_grad, LossKind};
use sitgru::parallel;
use sitgru::pipeline;
use sitgru::tensor::Tensor;

fn bench_data() -> Vec<Tensor> {
    let cfg = SyntheticConfig {
        height: 24,
        width: 24,
        length: 40,
        object_size: 5,
        speed: 1,
        anomaly: AnomalyKind::None,
        window: (0, 0),
        seed: 1,
    };
    let video = sitgru::data::synth::generate(&cfg).unwrap().0;
    let (cuboids, _) = pipeline::prepare_training(&[video], (24, 24), 4, &[1]).unwrap();
    cuboids
}

fn model(kind: CellKind) -> Model {
    Model::new(NetworkConfig::new(kind, 24 * 24), 3).unwrap()
}

/// Inference forwards for a batch of cuboids: the identical closure through
/// the parallel fan-out and through a plain sequential loop.
fn scoring_fanout(c: &mut Criterion) {
    let cuboids = bench_data();
    let m = model(CellKind::Sitgru);
    let work = |cub: &Tensor| {
        let (recon, _) = m.forward_cuboid(cub, false).unwrap();
        loss_value_and_grad(LossKind::Mse, &recon, cub).unwrap().0
    };

    let mut group = c.benchmark_group("batch_inference");
    group.bench_function("parallel", |b| {
        b.iter(|| parallel::par_map(&cuboids, work).iter().sum::<f64>())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| parallel::seq_map(&cuboids, work).iter().sum::<f64>())
    });
    group.finish();
}

/// One training minibatch (joint forward, losses, batch backward) per cell
/// kind; the gated-parameter count difference shows up directly here.
fn minibatch_step(c: &mut Criterion) {
    let cuboids = bench_data();
    let batch: Vec<&Tensor> = cuboids.iter().take(8).collect();

    let mut group = c.benchmark_group("minibatch_grads");
    group.sample_size(20);
    for kind in [CellKind::Sitgru, CellKind::Gru, CellKind::Lstm] {
        let m = model(kind);
        group.bench_with_input(BenchmarkId::from_parameter(kind), &m, |b, m| {
            b.iter(|| {
                let (recons, cache) = m.forward_batch(&batch, true).unwrap();
                let d: Vec<Tensor> = recons
                    .iter()
                    .zip(&batch)
                    .map(|(r, t)| loss_value_and_grad(LossKind::Mse, r, t).unwrap().1)
                    .collect();
                let refs: Vec<&Tensor> = d.iter().collect();
                m.backward_batch(&cache, &refs).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, scoring_fanout, minibatch_step);
criterion_main!(benches);
