//! Reconstruction-error scoring, regularity curves, ROC/AUC/EER, residual
//! heatmaps, and the loss-optimizer sweep.

use crate::error::{Error, Result};
use crate::optim::{LossKind, OptimizerKind};
use crate::parallel;
use crate::tensor::Tensor;

/// Euclidean distance over all elements of `frame - recon`.
pub fn reconstruction_error(frame: &Tensor, recon: &Tensor) -> Result<f64> {
    if frame.shape() != recon.shape() {
        return Err(Error::dimension(
            "reconstruction_error",
            frame.shape_string(),
            recon.shape_string(),
        ));
    }
    Ok(frame
        .data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Linear interpolation along the time axis through `(time, value)` points
/// sorted by time, with constant extrapolation beyond the ends.
pub fn interp_at(points: &[(f64, f64)], t: f64) -> f64 {
    debug_assert!(!points.is_empty());
    if t <= points[0].0 {
        return points[0].1;
    }
    if t >= points[points.len() - 1].0 {
        return points[points.len() - 1].1;
    }
    for pair in points.windows(2) {
        let (t0, v0) = pair[0];
        let (t1, v1) = pair[1];
        if t <= t1 {
            if t1 == t0 {
                return v1;
            }
            return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
        }
    }
    points[points.len() - 1].1
}

/// Per-frame costs from per-cuboid volume costs: cuboid costs are first
/// averaged in evaluation-order groups of `group` (the minibatch size), then
/// interpolated linearly from group centers onto integer frame indices, with
/// constant extrapolation before the first and after the last center.
pub fn frame_costs_from_cuboids(
    costs: &[(f64, f64)],
    frame_count: usize,
    group: usize,
) -> Result<Vec<f64>> {
    if costs.is_empty() {
        return Err(Error::Argument("no cuboid costs to interpolate".into()));
    }
    for pair in costs.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(Error::Argument(
                "cuboid centers must be strictly increasing".into(),
            ));
        }
    }
    let group = group.max(1);
    let grouped: Vec<(f64, f64)> = costs
        .chunks(group)
        .map(|chunk| {
            let n = chunk.len() as f64;
            let t = chunk.iter().map(|c| c.0).sum::<f64>() / n;
            let v = chunk.iter().map(|c| c.1).sum::<f64>() / n;
            (t, v)
        })
        .collect();
    Ok((0..frame_count)
        .map(|f| interp_at(&grouped, f as f64))
        .collect())
}

/// Regularity curve `1 - (e - min(e)) / max(e)` over one test video's
/// per-frame errors. A zero max (all errors zero) degenerates to all ones.
pub fn regularity_score(errors: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::Argument("empty error vector".into()));
    }
    if errors.iter().any(|&e| e < 0.0) {
        return Err(Error::Argument(
            "reconstruction errors must be non-negative".into(),
        ));
    }
    let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = errors.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Ok(vec![1.0; errors.len()]);
    }
    Ok(errors.iter().map(|&e| 1.0 - (e - min) / max).collect())
}

/// True/false positive rates from raw counts.
pub fn rates(tp: usize, fn_: usize, fp: usize, tn: usize) -> Result<(f64, f64)> {
    if tp + fn_ == 0 || fp + tn == 0 {
        return Err(Error::Argument(
            "rates need at least one positive and one negative".into(),
        ));
    }
    Ok((
        tp as f64 / (tp + fn_) as f64,
        fp as f64 / (tn + fp) as f64,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Threshold sweep over every distinct score (plus +/- infinity sentinels),
/// predicting positive where `score >= threshold`. Returns the ROC points
/// sorted by FPR, the trapezoidal AUC over FPR, and the EER — the value at
/// the curve's crossing with `FPR = 1 - TPR`, linearly interpolated between
/// the bracketing sweep points.
pub fn roc_auc_eer(scores: &[f64], labels: &[u8]) -> Result<(Vec<RocPoint>, f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::dimension(
            "roc_auc_eer",
            scores.len().to_string(),
            labels.len().to_string(),
        ));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument(
            "ROC needs at least one positive and one negative label".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // Consume the whole tie group at this threshold.
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (tpr, fpr) = rates(tp, pos - tp, fp, neg - fp)?;
        points.push(RocPoint { threshold, tpr, fpr });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        tpr: 1.0,
        fpr: 1.0,
    });

    let mut auc = 0.0;
    for pair in points.windows(2) {
        auc += (pair[1].fpr - pair[0].fpr) * (pair[0].tpr + pair[1].tpr) / 2.0;
    }

    // g = FPR - (1 - TPR) rises monotonically from -1 to +1 along the sweep;
    // the EER sits where it crosses zero.
    let g = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    let mut eer = 0.5;
    for pair in points.windows(2) {
        let (g0, g1) = (g(&pair[0]), g(&pair[1]));
        if g0 <= 0.0 && g1 >= 0.0 {
            let lambda = if g1 == g0 { 0.0 } else { -g0 / (g1 - g0) };
            eer = pair[0].fpr + lambda * (pair[1].fpr - pair[0].fpr);
            break;
        }
    }

    Ok((points, auc, eer))
}

/// Per-pixel absolute residual, min-max normalized into [0,1] per frame.
/// An all-zero residual stays all zero; a constant nonzero residual maps to
/// all ones.
pub fn residual_heatmap(frame: &Tensor, recon: &Tensor) -> Result<Tensor> {
    if frame.shape() != recon.shape() {
        return Err(Error::dimension(
            "residual_heatmap",
            frame.shape_string(),
            recon.shape_string(),
        ));
    }
    let residual: Vec<f64> = frame
        .data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let min = residual.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = residual.iter().cloned().fold(0.0f64, f64::max);
    let data = if max == 0.0 {
        vec![0.0; residual.len()]
    } else if max == min {
        vec![1.0; residual.len()]
    } else {
        residual.iter().map(|&v| (v - min) / (max - min)).collect()
    };
    Tensor::new(frame.shape().to_vec(), data)
}

/// One trained-and-evaluated grid cell.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub outcome: std::result::Result<(f64, f64), String>,
}

impl SweepCell {
    pub fn auc(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|&(auc, _)| auc)
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Grid index of the AUC argmax (ties: lower EER, then declaration
    /// order).
    pub best: Option<usize>,
}

impl SweepResult {
    pub fn best_cell(&self) -> Option<&SweepCell> {
        self.best.map(|i| &self.cells[i])
    }
}

/// Train and evaluate every grid cell with the supplied closure. Cells run
/// independently (in parallel under the `parallel` feature) and are merged
/// back in grid order; a failing cell is recorded without aborting the rest.
pub fn sweep_loss_optimizer(
    grid: &[(LossKind, OptimizerKind)],
    run_cell: impl Fn(LossKind, OptimizerKind) -> Result<(f64, f64)> + Sync + Send,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Argument("empty sweep grid".into()));
    }
    let outcomes = parallel::par_map(grid, |&(loss, opt)| {
        run_cell(loss, opt).map_err(|e| e.to_string())
    });
    let cells: Vec<SweepCell> = grid
        .iter()
        .zip(outcomes)
        .map(|(&(loss, optimizer), outcome)| SweepCell {
            loss,
            optimizer,
            outcome,
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, cell) in cells.iter().enumerate() {
        let Ok((auc, eer)) = cell.outcome else { continue };
        let better = match best {
            None => true,
            Some(j) => {
                let (bauc, beer) = cells[j].outcome.as_ref().copied().unwrap();
                auc > bauc || (auc == bauc && eer < beer)
            }
        };
        if better {
            best = Some(i);
        }
    }
    Ok(SweepResult { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn reconstruction_error_values() {
        let a = Tensor::vector(vec![3.0, 4.0]);
        let z = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(reconstruction_error(&a, &z).unwrap(), 5.0);
        assert_eq!(reconstruction_error(&a, &a).unwrap(), 0.0);
        let s = Tensor::vector(vec![3.0]);
        let r = Tensor::vector(vec![1.0]);
        assert_eq!(reconstruction_error(&s, &r).unwrap(), 2.0);
    }

    #[test]
    fn frame_cost_interpolation() {
        // Single cuboid: constant everywhere.
        let costs = vec![(1.5, 4.0)];
        assert_eq!(
            frame_costs_from_cuboids(&costs, 4, 1).unwrap(),
            vec![4.0; 4]
        );

        // Two centers: linear in between, constant outside.
        let costs = vec![(1.5, 1.0), (5.5, 3.0)];
        assert!((interp_at(&costs, 3.5) - 2.0).abs() < 1e-12);
        let per_frame = frame_costs_from_cuboids(&costs, 8, 1).unwrap();
        assert_eq!(per_frame[0], 1.0);
        assert_eq!(per_frame[1], 1.0);
        assert!((per_frame[3] - 1.75).abs() < 1e-12);
        assert_eq!(per_frame[7], 3.0);
    }

    #[test]
    fn frame_cost_grouping_averages_batches() {
        let costs = vec![(0.0, 1.0), (1.0, 3.0), (2.0, 5.0), (3.0, 7.0)];
        // Groups of 2: centers 0.5 and 2.5, costs 2 and 6.
        let per_frame = frame_costs_from_cuboids(&costs, 4, 2).unwrap();
        assert_eq!(per_frame[0], 2.0);
        assert!((per_frame[1] - 3.0).abs() < 1e-12);
        assert!((per_frame[2] - 5.0).abs() < 1e-12);
        assert_eq!(per_frame[3], 6.0);
    }

    #[test]
    fn frame_cost_error_paths() {
        assert!(frame_costs_from_cuboids(&[], 3, 1).is_err());
        assert!(frame_costs_from_cuboids(&[(1.0, 0.0), (1.0, 1.0)], 3, 1).is_err());
    }

    #[test]
    fn regularity_values() {
        let r = regularity_score(&[2.0, 4.0, 10.0]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!((r[1] - 0.8).abs() < 1e-12);
        assert!((r[2] - 0.2).abs() < 1e-12);

        assert_eq!(regularity_score(&[3.0, 3.0, 3.0]).unwrap(), vec![1.0; 3]);
        assert_eq!(regularity_score(&[0.0, 0.0]).unwrap(), vec![1.0; 2]);
        assert!(regularity_score(&[-1.0]).is_err());
        assert!(regularity_score(&[]).is_err());
    }

    #[test]
    fn regularity_is_order_reversing_with_max_one() {
        let mut rng = seed::rng(5, "regularity");
        for _ in 0..50 {
            let errors: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..10.0)).collect();
            let r = regularity_score(&errors).unwrap();
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
            let argmax_err = (0..30).max_by(|&a, &b| errors[a].partial_cmp(&errors[b]).unwrap());
            let argmin_reg = (0..30).min_by(|&a, &b| r[a].partial_cmp(&r[b]).unwrap());
            assert_eq!(argmax_err, argmin_reg);
        }
    }

    #[test]
    fn rate_values() {
        assert_eq!(rates(3, 1, 1, 4).unwrap(), (0.75, 0.2));
        assert_eq!(rates(5, 0, 0, 5).unwrap(), (1.0, 0.0));
        assert_eq!(rates(0, 5, 5, 0).unwrap(), (0.0, 1.0));
        assert!(rates(0, 0, 1, 1).is_err());
        assert!(rates(1, 1, 0, 0).is_err());
    }

    /// Brute-force pairwise-rank statistic: P(s_pos > s_neg) + 0.5 P(tie).
    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / total
    }

    #[test]
    fn roc_reference_cases() {
        let (_, auc, eer) = roc_auc_eer(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!((auc - 1.0).abs() < 1e-12);
        assert!(eer.abs() < 1e-12);

        let (_, auc, eer) = roc_auc_eer(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap();
        assert!((auc - 0.5).abs() < 1e-12);
        assert!((eer - 0.5).abs() < 1e-12);

        // 3 of 4 positive-over-negative pairs rank correctly.
        let (_, auc, _) = roc_auc_eer(&[0.9, 0.2, 0.3, 0.4], &[1, 0, 1, 0]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(roc_auc_eer(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc_eer(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn sweep_auc_matches_pairwise_oracle() {
        let mut rng = seed::rng(8, "roc.oracle");
        for case in 0..100 {
            let n = rng.gen_range(5..=200);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
            labels[0] = 1;
            labels[1] = 0;
            // Quantized scores so ties actually occur.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0.0f64..1.0) * 20.0).round() / 20.0)
                .collect();
            let (_, auc, eer) = roc_auc_eer(&scores, &labels).unwrap();
            let brute = pairwise_auc(&scores, &labels);
            assert!((auc - brute).abs() < 1e-9, "case {case}: {auc} vs {brute}");
            assert!((0.0..=1.0).contains(&auc));
            assert!((0.0..=1.0).contains(&eer));

            // Label reversal maps AUC to its complement.
            let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
            let (_, auc_flipped, _) = roc_auc_eer(&scores, &flipped).unwrap();
            assert!((auc + auc_flipped - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eer_sits_on_the_diagonal() {
        let mut rng = seed::rng(9, "eer");
        for _ in 0..100 {
            let n = rng.gen_range(5..=200);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
            labels[0] = 1;
            labels[1] = 0;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (points, _, eer) = roc_auc_eer(&scores, &labels).unwrap();
            // Interpolate TPR at FPR = eer along the polyline and check the
            // diagonal residual there.
            let curve: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
            let mut residual = f64::INFINITY;
            for pair in curve.windows(2) {
                let (f0, t0) = pair[0];
                let (f1, t1) = pair[1];
                let g0 = f0 - (1.0 - t0);
                let g1 = f1 - (1.0 - t1);
                if g0 <= 0.0 && g1 >= 0.0 {
                    let lambda = if g1 == g0 { 0.0 } else { -g0 / (g1 - g0) };
                    let f = f0 + lambda * (f1 - f0);
                    let t = t0 + lambda * (t1 - t0);
                    residual = (f - (1.0 - t)).abs();
                    assert!((f - eer).abs() < 1e-12);
                    break;
                }
            }
            assert!(residual <= 1e-9, "diagonal residual {residual}");
        }
    }

    #[test]
    fn heatmap_values() {
        let a = Tensor::vector(vec![1.0, 6.0, 11.0]);
        let b = Tensor::vector(vec![1.0, 1.0, 1.0]);
        // Residual [0, 5, 10] -> [0, 0.5, 1].
        let h = residual_heatmap(&a, &b).unwrap();
        assert_eq!(h.data(), &[0.0, 0.5, 1.0]);

        let same = residual_heatmap(&a, &a).unwrap();
        assert!(same.data().iter().all(|&v| v == 0.0));

        let single = residual_heatmap(
            &Tensor::vector(vec![2.0]),
            &Tensor::vector(vec![0.5]),
        )
        .unwrap();
        assert_eq!(single.data(), &[1.0]);

        let mut rng = seed::rng(10, "heatmap");
        for _ in 0..20 {
            let x = Tensor::vector((0..9).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let y = Tensor::vector((0..9).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let h = residual_heatmap(&x, &y).unwrap();
            assert!(h.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn sweep_selects_argmax() {
        let grid = vec![
            (LossKind::Mse, OptimizerKind::Adam),
            (LossKind::Xent, OptimizerKind::Adam),
        ];
        // Injected metric table.
        let result = sweep_loss_optimizer(&grid, |loss, _| {
            Ok(match loss {
                LossKind::Mse => (0.718, 0.342),
                LossKind::Xent => (0.698, 0.350),
            })
        })
        .unwrap();
        let best = result.best_cell().unwrap();
        assert_eq!(best.loss, LossKind::Mse);
        assert_eq!(best.optimizer, OptimizerKind::Adam);

        // Single-cell grid is trivially best.
        let single = sweep_loss_optimizer(&grid[..1], |_, _| Ok((0.5, 0.5))).unwrap();
        assert_eq!(single.best, Some(0));
    }

    #[test]
    fn sweep_matches_exhaustive_max_and_tolerates_failures() {
        let grid = vec![
            (LossKind::Mse, OptimizerKind::Adagrad),
            (LossKind::Mse, OptimizerKind::Adam),
            (LossKind::Xent, OptimizerKind::Adagrad),
            (LossKind::Xent, OptimizerKind::Adam),
        ];
        let table = [0.61, 0.74, 0.58, 0.70];
        let result = sweep_loss_optimizer(&grid, |loss, opt| {
            let idx = match (loss, opt) {
                (LossKind::Mse, OptimizerKind::Adagrad) => 0,
                (LossKind::Mse, OptimizerKind::Adam) => 1,
                (LossKind::Xent, OptimizerKind::Adagrad) => 2,
                _ => 3,
            };
            if idx == 2 {
                return Err(Error::Argument("injected failure".into()));
            }
            Ok((table[idx], 1.0 - table[idx]))
        })
        .unwrap();
        assert_eq!(result.cells.len(), 4);
        assert!(result.cells[2].outcome.is_err());
        // Brute-force max over the successful cells.
        let brute = result
            .cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.auc().map(|a| (i, a)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(i, _)| i);
        assert_eq!(result.best, brute);
    }
}
