//! Losses, optimizers and the training loop.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::network::{Model, ModelGrads};
use crate::parallel;
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Xent,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Xent => "xent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "xent" => Ok(LossKind::Xent),
            other => Err(Error::Argument(format!("unknown loss '{other}'"))),
        }
    }
}

const XENT_CLAMP: f64 = 1e-7;

/// Loss value and its gradient with respect to the reconstruction.
///
/// MSE is the mean squared difference. XENT is pixelwise binary cross
/// entropy, `-mean(t ln p + (1-t) ln(1-p))` with `p` clamped away from the
/// endpoints; targets must lie in [0,1].
pub fn loss_value_and_grad(
    kind: LossKind,
    recon: &Tensor,
    target: &Tensor,
) -> Result<(f64, Tensor)> {
    if recon.shape() != target.shape() {
        return Err(Error::dimension(
            "loss",
            recon.shape_string(),
            target.shape_string(),
        ));
    }
    let n = recon.len() as f64;
    match kind {
        LossKind::Mse => {
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(recon.len());
            for (&p, &t) in recon.data().iter().zip(target.data()) {
                let d = p - t;
                loss += d * d;
                grad.push(2.0 * d / n);
            }
            Ok((loss / n, Tensor::new(recon.shape().to_vec(), grad)?))
        }
        LossKind::Xent => {
            if target.data().iter().any(|&t| !(0.0..=1.0).contains(&t)) {
                return Err(Error::Argument(
                    "cross-entropy targets must lie in [0,1]".into(),
                ));
            }
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(recon.len());
            for (&p, &t) in recon.data().iter().zip(target.data()) {
                let pc = p.clamp(XENT_CLAMP, 1.0 - XENT_CLAMP);
                loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
                // Zero where the clamp is active: the loss is flat there.
                let g = if p <= XENT_CLAMP || p >= 1.0 - XENT_CLAMP {
                    0.0
                } else {
                    (-t / pc + (1.0 - t) / (1.0 - pc)) / n
                };
                grad.push(g);
            }
            Ok((loss / n, Tensor::new(recon.shape().to_vec(), grad)?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adagrad,
    Rmsprop,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Argument(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Per-parameter accumulator state. Adam keeps first/second moments plus a
/// step count; AdaGrad the squared-gradient sum; RMSprop a decayed squared
/// average.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rms_decay: f64,
    pub step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, param_len: usize) -> Self {
        OptimizerState {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.9999,
            eps: 1e-8,
            rms_decay: 0.9,
            step_count: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dimension(
                "optimizer_step",
                params.len().to_string(),
                self.m.len().to_string(),
            ));
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for ((p, &g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
            OptimizerKind::Adagrad => {
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.v.iter_mut()) {
                    *v += g * g;
                    *p -= self.lr * g / (v.sqrt() + self.eps);
                }
            }
            OptimizerKind::Rmsprop => {
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.v.iter_mut()) {
                    *v = self.rms_decay * *v + (1.0 - self.rms_decay) * g * g;
                    *p -= self.lr * g / (v.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minibatch size.
    pub batch_size: usize,
    /// Train fraction; the rest becomes the validation split.
    pub split: f64,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
    /// Optional global-norm gradient clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 8,
            split: 0.85,
            loss: LossKind::Mse,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-5,
            seed: 1,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Argument(format!(
                "split must lie strictly between 0 and 1, got {}",
                self.split
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Argument(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.epoch, self.train_loss, self.val_loss, self.seconds
        )
    }
}

/// One minibatch: joint forward (batch normalization pools all samples'
/// timesteps), per-sample losses, then the batch backward pass. Returns the
/// summed loss, summed gradients and the cache carrying the batch-norm
/// statistics to fold into the running averages.
fn batch_pass(
    model: &Model,
    batch: &[&Tensor],
    cfg: &TrainConfig,
) -> Result<(f64, ModelGrads, crate::network::ForwardCache)> {
    let (recons, cache) = model.forward_batch(batch, true)?;
    let mut loss_sum = 0.0;
    let mut d_recons = Vec::with_capacity(batch.len());
    for (recon, &target) in recons.iter().zip(batch) {
        let (loss, d_recon) = loss_value_and_grad(cfg.loss, recon, target)?;
        loss_sum += loss;
        d_recons.push(d_recon);
    }
    let d_refs: Vec<&Tensor> = d_recons.iter().collect();
    let grads = model.backward_batch(&cache, &d_refs)?;
    Ok((loss_sum, grads, cache))
}

fn validation_loss(model: &Model, val: &[&Tensor], loss_kind: LossKind) -> Result<f64> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let losses = parallel::par_map(val, |c| {
        let (recon, _) = model.forward_cuboid(c, false)?;
        Ok::<f64, Error>(loss_value_and_grad(loss_kind, &recon, c)?.0)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / val.len() as f64)
}

/// Train on cuboids with the reconstruction objective (each cuboid is its own
/// target). The data is shuffled once from the seed and split into train and
/// validation parts; epochs reshuffle the train part with per-epoch derived
/// seeds. Returns the snapshot from the epoch with the lowest validation
/// loss, along with the per-epoch records.
pub fn fit(model: Model, data: &[Tensor], cfg: &TrainConfig) -> Result<(Model, Vec<EpochRecord>)> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Argument(format!(
            "training needs at least 2 cuboids, got {}",
            data.len()
        )));
    }
    let mut model = model;

    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(&mut seed::rng(cfg.seed, "fit.split"));
    let n_train = ((data.len() as f64 * cfg.split).floor() as usize).clamp(1, data.len() - 1);
    let (train_idx, val_idx) = indices.split_at(n_train);
    let val: Vec<&Tensor> = val_idx.iter().map(|&i| &data[i]).collect();

    let mut optimizer =
        OptimizerState::new(cfg.optimizer, cfg.learning_rate, model.trainable_len());
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Model)> = None;

    let mut order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut seed::rng(cfg.seed, &format!("fit.epoch.{epoch}")));

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&Tensor> = batch.iter().map(|&i| &data[i]).collect();
            let (batch_loss, mut grads, cache) = batch_pass(&model, &samples, cfg)?;
            loss_sum += batch_loss;
            model.apply_bn_updates(&cache);

            grads.scale_assign(1.0 / batch.len() as f64);
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.l2_norm();
                if norm > clip {
                    grads.scale_assign(clip / norm);
                }
            }
            let mut flat = model.flatten_trainable();
            optimizer.step(&mut flat, &grads.flatten())?;
            model.assign_trainable(&flat)?;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let val_loss = validation_loss(&model, &val, cfg.loss)?;
        let seconds = start.elapsed().as_secs_f64().max(1e-9);
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds,
        });
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
    }

    let (_, best_model) = best.expect("at least one epoch");
    Ok((best_model, records))
}

/// Index of the epoch whose snapshot `fit` returned.
pub fn best_epoch(records: &[EpochRecord]) -> usize {
    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        if r.val_loss < records[best].val_loss {
            best = i;
        }
    }
    best
}
