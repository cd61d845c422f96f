//! Per-feature batch normalization with learned affine and running
//! statistics for inference.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

/// Batch statistics from one training-mode forward, applied to the running
/// averages in a deterministic order by the caller.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Tensor,
    pub var: Tensor,
}

/// Intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub x_hat: Tensor,
    pub inv_std: Tensor,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        BatchNormState {
            gamma: Tensor::new(vec![features], vec![1.0; features]).unwrap(),
            beta: Tensor::zeros(vec![features]),
            running_mean: Tensor::zeros(vec![features]),
            running_var: Tensor::new(vec![features], vec![1.0; features]).unwrap(),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn check_batch(&self, batch: &Tensor, training: bool) -> Result<()> {
        if batch.shape().len() != 2 || batch.cols() != self.features() {
            return Err(Error::dimension(
                "batchnorm",
                batch.shape_string(),
                format!("Nx{}", self.features()),
            ));
        }
        if training && batch.rows() < 2 {
            return Err(Error::Argument(format!(
                "batch normalization in training mode needs at least 2 rows, got {}",
                batch.rows()
            )));
        }
        Ok(())
    }

    /// Normalization without mutating `self`. Training mode uses the batch's
    /// own statistics (population variance) and reports them so the caller
    /// can fold them into the running averages; inference mode uses the
    /// stored running statistics and reports no cache.
    pub fn forward_pure(
        &self,
        batch: &Tensor,
        training: bool,
    ) -> Result<(Tensor, Option<BnCache>, Option<BnBatchStats>)> {
        self.check_batch(batch, training)?;
        let (rows, cols) = (batch.rows(), batch.cols());

        let (mean, var) = if training {
            let mut mean = vec![0.0; cols];
            for r in 0..rows {
                for (m, &v) in mean.iter_mut().zip(batch.row(r)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= rows as f64;
            }
            let mut var = vec![0.0; cols];
            for r in 0..rows {
                for ((s, &v), &m) in var.iter_mut().zip(batch.row(r)).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            for s in &mut var {
                *s /= rows as f64;
            }
            (mean, var)
        } else {
            (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            )
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = vec![0.0; rows * cols];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let xh = (batch.row(r)[c] - mean[c]) * inv_std[c];
                x_hat[r * cols + c] = xh;
                out[r * cols + c] = self.gamma.data()[c] * xh + self.beta.data()[c];
            }
        }
        let out = Tensor::matrix(rows, cols, out)?;
        if !training {
            return Ok((out, None, None));
        }
        let cache = BnCache {
            x_hat: Tensor::matrix(rows, cols, x_hat)?,
            inv_std: Tensor::vector(inv_std),
        };
        let stats = BnBatchStats {
            mean: Tensor::vector(mean),
            var: Tensor::vector(var),
        };
        Ok((out, Some(cache), Some(stats)))
    }

    /// Fold one batch's statistics into the running averages:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_batch_stats(&mut self, stats: &BnBatchStats) {
        let m = self.momentum;
        for (r, &b) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(stats.mean.data())
        {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, &b) in self
            .running_var
            .data_mut()
            .iter_mut()
            .zip(stats.var.data())
        {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    /// Mutating forward: training mode normalizes by batch statistics and
    /// updates the running averages; inference mode uses the running
    /// statistics.
    pub fn forward(&mut self, batch: &Tensor, training: bool) -> Result<Tensor> {
        let (out, _, stats) = self.forward_pure(batch, training)?;
        if let Some(stats) = stats {
            self.apply_batch_stats(&stats);
        }
        Ok(out)
    }

    /// Backward through a training-mode normalization.
    /// Returns `(d_input, d_gamma, d_beta)`.
    pub fn backward(&self, cache: &BnCache, d_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if d_out.shape() != cache.x_hat.shape() {
            return Err(Error::dimension(
                "batchnorm backward",
                d_out.shape_string(),
                cache.x_hat.shape_string(),
            ));
        }
        let (rows, cols) = (d_out.rows(), d_out.cols());
        let n = rows as f64;

        let mut d_gamma = vec![0.0; cols];
        let mut d_beta = vec![0.0; cols];
        let mut sum_dxhat = vec![0.0; cols];
        let mut sum_dxhat_xhat = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let dy = d_out.row(r)[c];
                let xh = cache.x_hat.row(r)[c];
                d_gamma[c] += dy * xh;
                d_beta[c] += dy;
                let dxh = dy * self.gamma.data()[c];
                sum_dxhat[c] += dxh;
                sum_dxhat_xhat[c] += dxh * xh;
            }
        }

        let mut d_in = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let dy = d_out.row(r)[c];
                let xh = cache.x_hat.row(r)[c];
                let dxh = dy * self.gamma.data()[c];
                d_in[r * cols + c] = cache.inv_std.data()[c] / n
                    * (n * dxh - sum_dxhat[c] - xh * sum_dxhat_xhat[c]);
            }
        }
        Ok((
            Tensor::matrix(rows, cols, d_in)?,
            Tensor::vector(d_gamma),
            Tensor::vector(d_beta),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn constant_batch_normalizes_to_zero() {
        let mut bn = BatchNormState::new(3);
        let batch = Tensor::matrix(4, 3, vec![2.5; 12]).unwrap();
        let out = bn.forward(&batch, true).unwrap();
        // Zero variance: the eps floor keeps the division finite and the
        // pre-affine output is exactly zero (gamma=1, beta=0 at init).
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_batch_hand_value() {
        let mut bn = BatchNormState::new(1);
        let batch = Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap();
        let out = bn.forward(&batch, true).unwrap();
        // Mean 1, population variance 1: (x - 1) / sqrt(1 + eps).
        let want = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((out.data()[0] + want).abs() < 1e-12);
        assert!((out.data()[1] - want).abs() < 1e-12);
    }

    #[test]
    fn training_rejects_single_row() {
        let bn = BatchNormState::new(2);
        let batch = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            bn.forward_pure(&batch, true),
            Err(Error::Argument(_))
        ));
        // Inference mode is fine with one row.
        assert!(bn.forward_pure(&batch, false).is_ok());
    }

    #[test]
    fn training_mode_standardizes_random_batches() {
        let mut rng = seed::rng(3, "bn.batch");
        for _ in 0..10 {
            let rows = 8 + rng.gen_range(0..8);
            let data: Vec<f64> = (0..rows * 5).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let batch = Tensor::matrix(rows, 5, data).unwrap();
            let bn = BatchNormState::new(5);
            let (out, _, _) = bn.forward_pure(&batch, true).unwrap();
            for c in 0..5 {
                let mean: f64 =
                    (0..rows).map(|r| out.row(r)[c]).sum::<f64>() / rows as f64;
                let var: f64 = (0..rows)
                    .map(|r| (out.row(r)[c] - mean).powi(2))
                    .sum::<f64>()
                    / rows as f64;
                assert!(mean.abs() < 1e-6, "feature mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "feature var {var}");
            }
        }
    }

    #[test]
    fn running_stats_converge_to_batch_stats() {
        let mut bn = BatchNormState::new(2);
        let batch = Tensor::matrix(4, 2, vec![1.0, -3.0, 2.0, 1.0, 0.5, 0.0, 4.0, 2.0]).unwrap();
        let train_out = bn.forward_pure(&batch, true).unwrap().0;
        for _ in 0..1500 {
            bn.forward(&batch, true).unwrap();
        }
        let infer_out = bn.forward_pure(&batch, false).unwrap().0;
        for (a, b) in train_out.data().iter().zip(infer_out.data()) {
            assert!((a - b).abs() < 1e-3, "train {a} vs inference {b}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seed::rng(9, "bn.fd");
        let rows = 5;
        let cols = 3;
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::matrix(rows, cols, data).unwrap();
        let mut bn = BatchNormState::new(cols);
        for v in bn.gamma.data_mut() {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in bn.beta.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let target: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss = |out: &Tensor| -> f64 {
            out.data()
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };

        let (out, cache, _) = bn.forward_pure(&x, true).unwrap();
        let d_out = Tensor::matrix(
            rows,
            cols,
            out.data()
                .iter()
                .zip(&target)
                .map(|(a, b)| 2.0 * (a - b))
                .collect(),
        )
        .unwrap();
        let (d_in, d_gamma, d_beta) = bn.backward(cache.as_ref().unwrap(), &d_out).unwrap();

        let eps = 1e-5;
        let mut x_var = x.clone();
        for idx in 0..x.len() {
            let orig = x_var.data()[idx];
            x_var.data_mut()[idx] = orig + eps;
            let plus = loss(&bn.forward_pure(&x_var, true).unwrap().0);
            x_var.data_mut()[idx] = orig - eps;
            let minus = loss(&bn.forward_pure(&x_var, true).unwrap().0);
            x_var.data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let a = d_in.data()[idx];
            if fd.abs() >= 1e-8 {
                assert!((a - fd).abs() / a.abs().max(fd.abs()) < 1e-4, "{a} vs {fd}");
            }
        }
        for idx in 0..cols {
            let orig = bn.gamma.data()[idx];
            bn.gamma.data_mut()[idx] = orig + eps;
            let plus = loss(&bn.forward_pure(&x, true).unwrap().0);
            bn.gamma.data_mut()[idx] = orig - eps;
            let minus = loss(&bn.forward_pure(&x, true).unwrap().0);
            bn.gamma.data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            assert!((d_gamma.data()[idx] - fd).abs() < 1e-6);

            let orig = bn.beta.data()[idx];
            bn.beta.data_mut()[idx] = orig + eps;
            let plus = loss(&bn.forward_pure(&x, true).unwrap().0);
            bn.beta.data_mut()[idx] = orig - eps;
            let minus = loss(&bn.forward_pure(&x, true).unwrap().0);
            bn.beta.data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            assert!((d_beta.data()[idx] - fd).abs() < 1e-6);
        }
    }
}
