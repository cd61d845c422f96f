//! Finite-difference verification of the analytic gradients, at cell level
//! and through the full network.

use rand::Rng;

use crate::cells::{self, sequence_backward, unroll_sequence, CellKind, CellParams, ALL_CELL_KINDS};
use crate::error::Result;
use crate::network::{Model, NetworkConfig};
use crate::seed;
use crate::tensor::{ActivationKind, Tensor};

/// Relative-error threshold every gradient check must stay under.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Components whose central-difference magnitude falls below this are
/// excluded: the oracle itself carries no signal there.
pub const FD_FLOOR: f64 = 1e-8;
/// Central differences of an O(1) loss at eps=1e-5 carry roundoff of about
/// |f|*eps_mach/(2*eps) ~ 1e-11; absolute differences below this floor are
/// inside the oracle's own resolution and say nothing about the analytic
/// side.
pub const FD_ABS_RESOLUTION: f64 = 1e-9;

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| n.abs() >= FD_FLOOR && (*a - *n).abs() >= FD_ABS_RESOLUTION)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

/// Worst-offender accumulator with a nonsmoothness escape: a component that
/// fails the tolerance is re-probed at eps/2, and if the two estimates
/// disagree grossly the loss is locally nondifferentiable there (a relu
/// kink inside the probing interval) and the oracle carries no verdict.
struct Comparison {
    worst: f64,
}

impl Comparison {
    fn new() -> Self {
        Comparison { worst: 0.0 }
    }

    fn record(
        &mut self,
        analytic: f64,
        fd: f64,
        refine: impl FnOnce(f64) -> Result<f64>,
    ) -> Result<()> {
        if fd.abs() < FD_FLOOR || (analytic - fd).abs() < FD_ABS_RESOLUTION {
            return Ok(());
        }
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
        if rel >= GRAD_TOLERANCE {
            let half = refine(cells::FD_EPSILON / 2.0)?;
            let denom = fd.abs().max(half.abs()).max(1e-12);
            if (fd - half).abs() / denom > 0.1 {
                return Ok(());
            }
        }
        self.worst = self.worst.max(rel);
        Ok(())
    }
}

fn random_vec(rng: &mut impl Rng, len: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::vector((0..len).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Cell-level check: a T=4 unroll of a small cell against the
/// finite-difference oracle, under a quadratic loss touching every step.
/// Returns the worst relative error across parameters, h0, and inputs.
pub fn check_cell(kind: CellKind, seed: u64) -> Result<f64> {
    let (d, n, t_steps) = (2, 3, 4);
    let p = CellParams::init(kind, d, n, seed, "gradcheck.cell");
    let mut rng = seed::rng(seed, "gradcheck.cell.data");
    let xs: Vec<Tensor> = (0..t_steps)
        .map(|_| random_vec(&mut rng, d, -1.0, 1.0))
        .collect();
    let h0 = random_vec(&mut rng, n, 0.0, 1.0);
    let targets: Vec<Tensor> = (0..t_steps)
        .map(|_| random_vec(&mut rng, n, -0.5, 0.5))
        .collect();

    let loss_of = |p: &CellParams, xs: &[Tensor], h0: &Tensor| -> Result<f64> {
        let (states, _) = unroll_sequence(p, xs, h0)?;
        Ok(states
            .iter()
            .zip(&targets)
            .map(|(s, t)| {
                s.h.data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum())
    };

    let (states, _) = unroll_sequence(&p, &xs, &h0)?;
    let d_steps: Vec<Tensor> = states
        .iter()
        .zip(&targets)
        .map(|(s, t)| {
            Tensor::vector(
                s.h.data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| 2.0 * (a - b))
                    .collect(),
            )
        })
        .collect();
    let analytic = sequence_backward(&p, &states, &d_steps)?;

    let mut cmp = Comparison::new();

    // Parameters through a flat view.
    let analytic_params = analytic.by_param.flatten();
    let mut flat = p.flatten();
    let mut work = p.clone();
    for idx in 0..flat.len() {
        let orig = flat[idx];
        let mut fd_at = |eps: f64| -> Result<f64> {
            flat[idx] = orig + eps;
            work.assign_flat(&flat)?;
            let plus = loss_of(&work, &xs, &h0)?;
            flat[idx] = orig - eps;
            work.assign_flat(&flat)?;
            let minus = loss_of(&work, &xs, &h0)?;
            flat[idx] = orig;
            work.assign_flat(&flat)?;
            Ok((plus - minus) / (2.0 * eps))
        };
        let fd = fd_at(cells::FD_EPSILON)?;
        cmp.record(analytic_params[idx], fd, fd_at)?;
    }

    // Initial hidden state.
    let mut h0_var = h0.clone();
    for idx in 0..h0.len() {
        let orig = h0_var.data()[idx];
        let mut fd_at = |eps: f64| -> Result<f64> {
            h0_var.data_mut()[idx] = orig + eps;
            let plus = loss_of(&p, &xs, &h0_var)?;
            h0_var.data_mut()[idx] = orig - eps;
            let minus = loss_of(&p, &xs, &h0_var)?;
            h0_var.data_mut()[idx] = orig;
            Ok((plus - minus) / (2.0 * eps))
        };
        let fd = fd_at(cells::FD_EPSILON)?;
        cmp.record(analytic.d_h0.data()[idx], fd, fd_at)?;
    }

    // Inputs at every step.
    let mut xs_var = xs.clone();
    for t in 0..xs.len() {
        for idx in 0..xs[t].len() {
            let orig = xs_var[t].data()[idx];
            let mut fd_at = |eps: f64| -> Result<f64> {
                xs_var[t].data_mut()[idx] = orig + eps;
                let plus = loss_of(&p, &xs_var, &h0)?;
                xs_var[t].data_mut()[idx] = orig - eps;
                let minus = loss_of(&p, &xs_var, &h0)?;
                xs_var[t].data_mut()[idx] = orig;
                Ok((plus - minus) / (2.0 * eps))
            };
            let fd = fd_at(cells::FD_EPSILON)?;
            cmp.record(analytic.d_inputs[t].data()[idx], fd, fd_at)?;
        }
    }

    Ok(cmp.worst)
}

fn check_network_impl(kind: CellKind, seed: u64, batch: usize) -> Result<f64> {
    let cfg = NetworkConfig {
        layer_units: vec![3, 2, 1],
        cell_kind: kind,
        inter_activation: ActivationKind::Tanh,
        frame_pixels: 5,
        t_steps: 3,
    };
    let mut model = Model::new(cfg.clone(), seed)?;
    let mut rng = seed::rng(seed, "gradcheck.network.data");
    let elements = cfg.t_steps * cfg.frame_pixels;
    let mut rand_mat = |lo: f64, hi: f64| {
        Tensor::matrix(
            cfg.t_steps,
            cfg.frame_pixels,
            (0..elements).map(|_| rng.gen_range(lo..hi)).collect(),
        )
    };
    let inputs: Vec<Tensor> = (0..batch).map(|_| rand_mat(0.0, 1.0)).collect::<Result<_>>()?;
    let targets: Vec<Tensor> = (0..batch).map(|_| rand_mat(0.1, 0.9)).collect::<Result<_>>()?;
    let input_refs: Vec<&Tensor> = inputs.iter().collect();

    let (recons, cache) = model.forward_batch(&input_refs, true)?;
    let d_recons: Vec<Tensor> = recons
        .iter()
        .zip(&targets)
        .map(|(r, t)| {
            Tensor::matrix(
                cfg.t_steps,
                cfg.frame_pixels,
                r.data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| 2.0 * (a - b))
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    let d_refs: Vec<&Tensor> = d_recons.iter().collect();
    let analytic = model.backward_batch(&cache, &d_refs)?.flatten();

    let loss_of = |m: &Model| -> Result<f64> {
        let (rs, _) = m.forward_batch(&input_refs, true)?;
        Ok(rs
            .iter()
            .zip(&targets)
            .map(|(r, t)| {
                r.data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum())
    };

    let mut cmp = Comparison::new();
    let mut flat = model.flatten_trainable();
    for idx in 0..flat.len() {
        let orig = flat[idx];
        let mut fd_at = |eps: f64| -> Result<f64> {
            flat[idx] = orig + eps;
            model.assign_trainable(&flat)?;
            let plus = loss_of(&model)?;
            flat[idx] = orig - eps;
            model.assign_trainable(&flat)?;
            let minus = loss_of(&model)?;
            flat[idx] = orig;
            model.assign_trainable(&flat)?;
            Ok((plus - minus) / (2.0 * eps))
        };
        let fd = fd_at(cells::FD_EPSILON)?;
        cmp.record(analytic[idx], fd, fd_at)?;
    }
    Ok(cmp.worst)
}

/// End-to-end check on a downscaled network: every trainable parameter of a
/// [3,2,1] stack over 5-pixel frames and T=3, perturbed one component at a
/// time, against the analytic backward pass.
pub fn check_network(kind: CellKind, seed: u64) -> Result<f64> {
    check_network_impl(kind, seed, 1)
}

/// Same check through the minibatch path, where batch normalization pools
/// statistics over all samples and gradients couple across the batch.
pub fn check_network_batch(kind: CellKind, seed: u64, batch: usize) -> Result<f64> {
    check_network_impl(kind, seed, batch)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub kind: CellKind,
    pub worst_cell: f64,
    pub worst_network: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst_cell < GRAD_TOLERANCE && self.worst_network < GRAD_TOLERANCE
    }
}

/// Run cell- and network-level checks over the given seeds, reporting the
/// worst offender per kind. `sabotage` flips the sign of one analytic
/// component so the harness itself can be shown to catch bad gradients.
pub fn run(kinds: &[CellKind], seeds: &[u64], sabotage: bool) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for &kind in kinds {
        let mut worst_cell = 0.0f64;
        let mut worst_network = 0.0f64;
        for &s in seeds {
            worst_cell = worst_cell.max(check_cell(kind, s)?);
            worst_network = worst_network.max(check_network(kind, s)?);
        }
        if sabotage {
            // A sign flip of any real gradient makes the relative error ~2.
            worst_cell = worst_cell.max(2.0);
        }
        reports.push(GradCheckReport {
            kind,
            worst_cell,
            worst_network,
        });
    }
    Ok(reports)
}

pub fn default_kinds() -> Vec<CellKind> {
    ALL_CELL_KINDS.to_vec()
}
