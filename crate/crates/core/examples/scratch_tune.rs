// Scratch experiment (deleted before ship): diagnose gradcheck marginal component
// and tune desk-scale detection hyperparameters.

use sitgru::cells::{CellKind, FD_EPSILON};
use sitgru::data::synth::{AnomalyKind, SyntheticConfig};
use sitgru::network::{Model, NetworkConfig};
use sitgru::optim::{LossKind, OptimizerKind, TrainConfig};
use sitgru::pipeline;
use sitgru::tensor::{ActivationKind, Tensor};
use sitgru::{seed, Result};
use rand::Rng;

fn diag_gradcheck() -> Result<()> {
    // Reproduce check_network for sitgru_tanh seeds 1..3, printing worst components.
    for s in [1u64, 2, 3] {
        let cfg = NetworkConfig {
            layer_units: vec![3, 2, 1],
            cell_kind: CellKind::SitgruTanhNoReset,
            inter_activation: ActivationKind::Tanh,
            frame_pixels: 5,
            t_steps: 3,
        };
        let mut model = Model::new(cfg.clone(), s)?;
        let mut rng = seed::rng(s, "gradcheck.network.data");
        let input = Tensor::matrix(cfg.t_steps, cfg.frame_pixels,
            (0..cfg.t_steps * cfg.frame_pixels).map(|_| rng.gen_range(0.0..1.0)).collect())?;
        let target = Tensor::matrix(cfg.t_steps, cfg.frame_pixels,
            (0..cfg.t_steps * cfg.frame_pixels).map(|_| rng.gen_range(0.1..0.9)).collect())?;
        let (recon, cache) = model.forward_cuboid(&input, true)?;
        let d_recon = Tensor::matrix(cfg.t_steps, cfg.frame_pixels,
            recon.data().iter().zip(target.data()).map(|(a, b)| 2.0 * (a - b)).collect())?;
        let analytic = model.backward_cuboid(&cache, &d_recon)?.flatten();
        let loss = |m: &Model| -> Result<f64> {
            let (r, _) = m.forward_cuboid(&input, true)?;
            Ok(r.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum())
        };
        let mut flat = model.flatten_trainable();
        let mut worst = (0.0f64, 0usize, 0.0, 0.0);
        for idx in 0..flat.len() {
            let orig = flat[idx];
            flat[idx] = orig + FD_EPSILON;
            model.assign_trainable(&flat)?;
            let plus = loss(&model)?;
            flat[idx] = orig - FD_EPSILON;
            model.assign_trainable(&flat)?;
            let minus = loss(&model)?;
            flat[idx] = orig;
            let fd = (plus - minus) / (2.0 * FD_EPSILON);
            let a = analytic[idx];
            if fd.abs() >= 1e-8 {
                let rel = (a - fd).abs() / a.abs().max(fd.abs());
                if rel > worst.0 { worst = (rel, idx, a, fd); }
            }
        }
        model.assign_trainable(&flat)?;
        println!("seed {s}: worst rel {:.3e} at idx {} analytic {:.6e} fd {:.6e} absdiff {:.3e}",
            worst.0, worst.1, worst.2, worst.3, (worst.2 - worst.3).abs());
    }
    Ok(())
}


fn desk_run2(lr: f64, obj: usize, mseed: u64, dseed: u64, group: usize, kind: CellKind, label: &str, vids: usize, epochs: usize, loss: LossKind, train_len: usize, units: Vec<usize>) -> Result<(f64, f64)> {
    let train_cfgs: Vec<SyntheticConfig> = (0..vids).map(|i| SyntheticConfig {
        height: 32, width: 32, length: train_len, object_size: obj, speed: 1,
        anomaly: AnomalyKind::None, window: (0, 0), seed: dseed + i as u64,
    }).collect();
    let test_cfgs: Vec<SyntheticConfig> = (0..4).map(|i| SyntheticConfig {
        height: 32, width: 32, length: 60, object_size: obj, speed: 1,
        anomaly: AnomalyKind::Speed(3), window: (20, 40), seed: dseed + 100 + i as u64,
    }).collect();
    let mut ds = pipeline::synth_dataset(&train_cfgs, &test_cfgs[0], 4, &[1])?;
    let band = std::env::var("BAND").is_ok();
    let remap = |v: f64| 0.5 + v * 0.5;
    if band {
        for c in &mut ds.train_cuboids { for v in c.data_mut() { *v = remap(*v); } }
    }
    let net = NetworkConfig {
        layer_units: units,
        cell_kind: kind,
        inter_activation: ActivationKind::Tanh,
        frame_pixels: 1024,
        t_steps: 4,
    };
    let train = TrainConfig {
        epochs, batch_size: 8, learning_rate: lr, seed: 7,
        loss, optimizer: OptimizerKind::Adam,
        ..TrainConfig::default()
    };
    let model = Model::new(net, mseed)?;
    let (trained, records) = sitgru::optim::fit(model, &ds.train_cuboids, &train)?;
    let show = |i: usize| format!("{:.4}", records[i.min(records.len()-1)].train_loss);
    print!("loss[0,5,15,30,59]=[{},{},{},{},{}] ", show(0), show(5), show(15), show(30), show(59));
    if std::env::var("DUMP").is_ok() {
        let f = &trained.final_cell;
        let g = |o: &Option<sitgru::cells::GateParams>| match o {
            Some(g) => (g.w.data()[0], g.u.data()[0], g.b.data()[0]),
            None => (0.0, 0.0, 0.0),
        };
        let (wz, uz, bz) = g(&f.update);
        println!();
        println!("final z: w={wz:.3} u={uz:.3} b={bz:.3}  cand: w={:.3} u={:.3} b={:.3}",
            f.candidate.w.data()[0], f.candidate.u.data()[0], f.candidate.b.data()[0]);
        let rb = &trained.readout.bias;
        let rbm = rb.data().iter().sum::<f64>() / rb.len() as f64;
        let rw_absmax = trained.readout.weight.data().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        println!("readout bias mean {rbm:.3}, |W|max {rw_absmax:.3}");
        let m0 = ds.train_cuboids[0].clone();
        let (r0, _) = trained.forward_cuboid(&m0, false)?;
        let rmin = r0.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let rmax = r0.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("recon range on a train cuboid: [{rmin:.4}, {rmax:.4}]");
    }

    // pooled scoring over 4 test videos
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut aucs = Vec::new();
    let mut cost_normal = 0.0; let mut n_normal = 0.0;
    let mut cost_anom = 0.0; let mut n_anom = 0.0;
    for tc in &test_cfgs {
        let (seq, labels) = sitgru::data::synth::generate(tc)?;
        let (mut cubs, _) = pipeline::prepare_eval(&seq, &ds.stats, 4)?;
        if band {
            for c in &mut cubs { for v in c.frames.data_mut() { *v = remap(*v); } }
        }
        let scored = pipeline::score_video(&trained, &cubs, labels.len(), group)?;
        for (c, cost) in cubs.iter().zip(&scored.cuboid_costs) {
            let anom = c.source_indices.iter().any(|&i| labels[i] == 1);
            if anom { cost_anom += cost.1; n_anom += 1.0; } else { cost_normal += cost.1; n_normal += 1.0; }
        }
        let (_, auc, _) = sitgru::eval::roc_auc_eer(&scored.scores, &labels)?;
        aucs.push(auc);
        all_scores.extend(scored.scores.iter().cloned());
        all_labels.extend(labels.iter().cloned());
    }
    let (_, pooled_auc, pooled_eer) = sitgru::eval::roc_auc_eer(&all_scores, &all_labels)?;
    // how input-dependent is the reconstruction? std across cuboids, averaged over (t, pixel)
    let (seq0, _) = sitgru::data::synth::generate(&test_cfgs[0])?;
    let (cubs0, _) = pipeline::prepare_eval(&seq0, &ds.stats, 4)?;
    let sample: Vec<&sitgru::data::Cuboid> = cubs0.iter().step_by(5).collect();
    let recons: Vec<Tensor> = sample.iter().map(|c| {
        let mut m = c.as_matrix();
        if band { for v in m.data_mut() { *v = remap(*v); } }
        trained.forward_cuboid(&m, false).unwrap().0
    }).collect();
    let n_el = recons[0].len();
    let mut var_sum = 0.0;
    for i in 0..n_el {
        let vals: Vec<f64> = recons.iter().map(|r| r.data()[i]).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        var_sum += vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
    }
    let recon_std = (var_sum / n_el as f64).sqrt();
    println!("{label} lr={lr:.0e} obj={obj} ms={mseed} len={train_len} v={vids} | cost nrm {:.2} anm {:.2} gap {:+.1}% | per-video {:?} | pooled AUC {pooled_auc:.3} EER {pooled_eer:.3} | rstd {recon_std:.4}",
        cost_normal / n_normal, cost_anom / n_anom,
        100.0 * (cost_anom / n_anom - cost_normal / n_normal) / (cost_normal / n_normal),
        aucs.iter().map(|a| (a * 100.0).round() / 100.0).collect::<Vec<_>>());
    Ok((pooled_auc, pooled_eer))
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() > 1 && args[1] == "grad" {
        return diag_gradcheck();
    }
    desk_run2(7e-4, 6, 7, 100, 8, CellKind::Sitgru, "J1", 2, 60, LossKind::Mse, 1200, vec![32, 16, 8, 16, 32, 1])?;
    desk_run2(1e-3, 6, 7, 100, 8, CellKind::Sitgru, "J2", 2, 60, LossKind::Mse, 1200, vec![32, 16, 8, 16, 32, 1])?;
    desk_run2(2e-3, 6, 7, 100, 8, CellKind::Sitgru, "J3", 2, 60, LossKind::Mse, 1200, vec![32, 16, 8, 16, 32, 1])?;
    Ok(())
}
