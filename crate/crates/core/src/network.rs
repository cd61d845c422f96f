//! Stacked recurrent encoder-decoder over frame cuboids.
//!
//! A cuboid of `T` flattened frames runs through a stack of recurrent layers
//! (32-16-8-16-32 by default). Each stacked layer unrolls its cell over the
//! `T` timesteps, then applies the inter-layer activation followed by batch
//! normalization over the timestep axis. An affine readout projects the last
//! stacked layer's hidden vectors back to pixel space, and a final
//! single-unit cell with shared scalar parameters runs over the time axis
//! independently at every pixel position. A sigmoid lands the reconstruction
//! in (0,1) with the same shape as the input cuboid.

use rand::Rng;

use crate::batchnorm::{BatchNormState, BnBatchStats, BnCache};
use crate::cells::{self, CellKind, CellParams, CellState};
use crate::error::{Error, Result};
use crate::parallel;
use crate::seed;
use crate::tensor::{
    activation_grad, apply_activation, matvec, matvec_transposed, outer_add_assign,
    scalar_activation, scalar_activation_grad, sigmoid, ActivationKind, Tensor,
};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkConfig {
    /// Hidden sizes per layer; the final entry must be 1 (the per-pixel cell).
    pub layer_units: Vec<usize>,
    pub cell_kind: CellKind,
    pub inter_activation: ActivationKind,
    /// Flattened frame size (H*W after preprocessing).
    pub frame_pixels: usize,
    /// Timesteps per cuboid.
    pub t_steps: usize,
}

impl NetworkConfig {
    pub fn new(cell_kind: CellKind, frame_pixels: usize) -> Self {
        NetworkConfig {
            layer_units: vec![32, 16, 8, 16, 32, 1],
            cell_kind,
            inter_activation: ActivationKind::Tanh,
            frame_pixels,
            t_steps: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_units.len() < 2 {
            return Err(Error::Argument(
                "layer_units needs at least one stacked layer plus the final unit".into(),
            ));
        }
        if *self.layer_units.last().unwrap() != 1 {
            return Err(Error::Argument(format!(
                "last layer must have 1 unit, got {}",
                self.layer_units.last().unwrap()
            )));
        }
        if self.layer_units.iter().any(|&u| u == 0) {
            return Err(Error::Argument("layer units must be positive".into()));
        }
        if self.frame_pixels == 0 {
            return Err(Error::Argument("frame_pixels must be positive".into()));
        }
        if self.t_steps == 0 {
            return Err(Error::Argument("t_steps must be positive".into()));
        }
        Ok(())
    }

    /// Units of the stacked recurrent layers (everything before the final
    /// single-unit cell).
    pub fn stacked_units(&self) -> &[usize] {
        &self.layer_units[..self.layer_units.len() - 1]
    }
}

/// Affine projection from the last stacked layer's hidden vector to one
/// value per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub layers: Vec<CellParams>,
    pub norms: Vec<BatchNormState>,
    pub readout: ReadoutParams,
    pub final_cell: CellParams,
}

impl Model {
    pub fn new(config: NetworkConfig, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut input = config.frame_pixels;
        for (l, &units) in config.stacked_units().iter().enumerate() {
            layers.push(CellParams::init(
                config.cell_kind,
                input,
                units,
                master_seed,
                &format!("init.layer{l}"),
            ));
            norms.push(BatchNormState::new(units));
            input = units;
        }
        let last_units = *config.stacked_units().last().unwrap();
        let bound = (6.0 / (last_units + config.frame_pixels) as f64).sqrt();
        let mut rng = seed::rng(master_seed, "init.readout.w");
        let weight = Tensor::matrix(
            config.frame_pixels,
            last_units,
            (0..config.frame_pixels * last_units)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        )?;
        let readout = ReadoutParams {
            weight,
            bias: Tensor::zeros(vec![config.frame_pixels]),
        };
        let final_cell = CellParams::init(config.cell_kind, 1, 1, master_seed, "init.final");
        Ok(Model {
            config,
            layers,
            norms,
            readout,
            final_cell,
        })
    }

    /// Trainable parameters across recurrent cells only (stacked layers plus
    /// the final cell); excludes batch-norm affine and the readout.
    pub fn cell_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|p| p.param_len())
            .sum::<usize>()
            + self.final_cell.param_len()
    }

    pub fn trainable_len(&self) -> usize {
        let mut n = 0;
        self.visit_trainable(&mut |t| n += t.len());
        n
    }

    /// Trainable tensors in declared order: stacked cells, per-layer
    /// gamma/beta, readout weight/bias, final cell.
    pub fn visit_trainable(&self, f: &mut impl FnMut(&Tensor)) {
        for p in &self.layers {
            p.visit(f);
        }
        for bn in &self.norms {
            f(&bn.gamma);
            f(&bn.beta);
        }
        f(&self.readout.weight);
        f(&self.readout.bias);
        self.final_cell.visit(f);
    }

    pub fn visit_trainable_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        for p in &mut self.layers {
            p.visit_mut(f);
        }
        for bn in &mut self.norms {
            f(&mut bn.gamma);
            f(&mut bn.beta);
        }
        f(&mut self.readout.weight);
        f(&mut self.readout.bias);
        self.final_cell.visit_mut(f);
    }

    pub fn flatten_trainable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        self.visit_trainable(&mut |t| out.extend_from_slice(t.data()));
        out
    }

    pub fn assign_trainable(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.trainable_len() {
            return Err(Error::Argument(format!(
                "flat parameter length {} does not match model ({})",
                values.len(),
                self.trainable_len()
            )));
        }
        let mut off = 0;
        self.visit_trainable_mut(&mut |t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        });
        Ok(())
    }

    /// Full persisted state: trainable parameters followed by each layer's
    /// batch-norm running mean and variance.
    pub fn state_len(&self) -> usize {
        self.trainable_len()
            + self
                .norms
                .iter()
                .map(|bn| bn.running_mean.len() + bn.running_var.len())
                .sum::<usize>()
    }

    pub fn flatten_state(&self) -> Vec<f64> {
        let mut out = self.flatten_trainable();
        for bn in &self.norms {
            out.extend_from_slice(bn.running_mean.data());
            out.extend_from_slice(bn.running_var.data());
        }
        out
    }

    pub fn assign_state(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.state_len() {
            return Err(Error::Argument(format!(
                "state length {} does not match model ({})",
                values.len(),
                self.state_len()
            )));
        }
        let trainable = self.trainable_len();
        self.assign_trainable(&values[..trainable])?;
        let mut off = trainable;
        for bn in &mut self.norms {
            let n = bn.running_mean.len();
            bn.running_mean
                .data_mut()
                .copy_from_slice(&values[off..off + n]);
            off += n;
            bn.running_var
                .data_mut()
                .copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Fold the batch-norm statistics recorded by a training-mode forward
    /// into the running averages. Kept separate from the forward itself so
    /// per-sample forwards stay pure and a minibatch can apply updates in a
    /// fixed sample order.
    pub fn apply_bn_updates(&mut self, cache: &ForwardCache) {
        for (bn, stats) in self.norms.iter_mut().zip(&cache.bn_stats) {
            bn.apply_batch_stats(stats);
        }
    }

    pub fn forward_cuboid(&self, input: &Tensor, training: bool) -> Result<(Tensor, ForwardCache)> {
        forward_cuboid(self, input, training)
    }

    pub fn backward_cuboid(&self, cache: &ForwardCache, d_recon: &Tensor) -> Result<ModelGrads> {
        backward_cuboid(self, cache, d_recon)
    }

    /// Minibatch forward: batch normalization pools statistics over every
    /// sample's timesteps, which is how training consumes the network.
    pub fn forward_batch(
        &self,
        inputs: &[&Tensor],
        training: bool,
    ) -> Result<(Vec<Tensor>, ForwardCache)> {
        forward_batch(self, inputs, training)
    }

    /// Gradients summed over the minibatch, matching `forward_batch`.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        d_recons: &[&Tensor],
    ) -> Result<ModelGrads> {
        backward_batch(self, cache, d_recons)
    }
}

/// Scalar view of the final cell's parameters (input size 1, hidden size 1).
#[derive(Debug, Clone, Copy, Default)]
struct ScalarCell {
    kind_has_reset: bool,
    wz: f64, uz: f64, bz: f64,
    wr: f64, ur: f64, br: f64,
    wh: f64, uh: f64, bh: f64,
    wi: f64, ui: f64, bi: f64,
    wf: f64, uf: f64, bf: f64,
    wo: f64, uo: f64, bo: f64,
}

impl ScalarCell {
    fn from_params(p: &CellParams) -> Self {
        debug_assert_eq!(p.input_size, 1);
        debug_assert_eq!(p.hidden_size, 1);
        let pick = |g: &Option<crate::cells::GateParams>| match g {
            Some(g) => (g.w.data()[0], g.u.data()[0], g.b.data()[0]),
            None => (0.0, 0.0, 0.0),
        };
        let (wz, uz, bz) = pick(&p.update);
        let (wr, ur, br) = pick(&p.reset);
        let (wh, uh, bh) = (
            p.candidate.w.data()[0],
            p.candidate.u.data()[0],
            p.candidate.b.data()[0],
        );
        let ((wi, ui, bi), (wf, uf, bf), (wo, uo, bo)) = match &p.lstm {
            Some(l) => (
                (l.input.w.data()[0], l.input.u.data()[0], l.input.b.data()[0]),
                (l.forget.w.data()[0], l.forget.u.data()[0], l.forget.b.data()[0]),
                (l.output.w.data()[0], l.output.u.data()[0], l.output.b.data()[0]),
            ),
            None => ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        };
        ScalarCell {
            kind_has_reset: p.reset.is_some(),
            wz, uz, bz, wr, ur, br, wh, uh, bh, wi, ui, bi, wf, uf, bf, wo, uo, bo,
        }
    }
}

/// One scalar step's intermediates; unused slots stay zero.
#[derive(Debug, Clone, Copy, Default)]
struct ScalarStep {
    x: f64,
    h_prev: f64,
    z: f64,
    r: f64,
    cand: f64,
    h: f64,
    c_prev: f64,
    c: f64,
    tanh_c: f64,
    i: f64,
    f: f64,
    o: f64,
}

fn scalar_step(kind: CellKind, p: &ScalarCell, x: f64, h_prev: f64, c_prev: f64) -> ScalarStep {
    let act = kind.candidate_activation();
    let mut s = ScalarStep {
        x,
        h_prev,
        c_prev,
        ..ScalarStep::default()
    };
    match kind {
        CellKind::GruNoUpdate => {
            s.r = sigmoid(p.wr * x + p.ur * h_prev + p.br);
            s.cand = scalar_activation(p.wh * x + p.uh * (h_prev * s.r) + p.bh, act);
            s.h = h_prev;
        }
        CellKind::Lstm => {
            s.i = sigmoid(p.wi * x + p.ui * h_prev + p.bi);
            s.f = sigmoid(p.wf * x + p.uf * h_prev + p.bf);
            s.o = sigmoid(p.wo * x + p.uo * h_prev + p.bo);
            s.cand = scalar_activation(p.wh * x + p.uh * h_prev + p.bh, act);
            s.c = s.f * c_prev + s.i * s.cand;
            s.tanh_c = s.c.tanh();
            s.h = s.o * s.tanh_c;
        }
        _ => {
            s.z = sigmoid(p.wz * x + p.uz * h_prev + p.bz);
            let rec_in = if p.kind_has_reset {
                s.r = sigmoid(p.wr * x + p.ur * h_prev + p.br);
                h_prev * s.r
            } else {
                h_prev
            };
            s.cand = scalar_activation(p.wh * x + p.uh * rec_in + p.bh, act);
            s.h = s.z * h_prev + (1.0 - s.z) * s.cand;
        }
    }
    s
}

/// Gradient accumulator for the shared final-cell parameters.
#[derive(Debug, Clone, Copy, Default)]
struct ScalarCellGrads {
    wz: f64, uz: f64, bz: f64,
    wr: f64, ur: f64, br: f64,
    wh: f64, uh: f64, bh: f64,
    wi: f64, ui: f64, bi: f64,
    wf: f64, uf: f64, bf: f64,
    wo: f64, uo: f64, bo: f64,
}

impl ScalarCellGrads {
    fn write_into(&self, grads: &mut CellParams) {
        let set = |g: &mut Option<crate::cells::GateParams>, w: f64, u: f64, b: f64| {
            if let Some(g) = g {
                g.w.data_mut()[0] += w;
                g.u.data_mut()[0] += u;
                g.b.data_mut()[0] += b;
            }
        };
        set(&mut grads.update, self.wz, self.uz, self.bz);
        set(&mut grads.reset, self.wr, self.ur, self.br);
        grads.candidate.w.data_mut()[0] += self.wh;
        grads.candidate.u.data_mut()[0] += self.uh;
        grads.candidate.b.data_mut()[0] += self.bh;
        if let Some(l) = &mut grads.lstm {
            l.input.w.data_mut()[0] += self.wi;
            l.input.u.data_mut()[0] += self.ui;
            l.input.b.data_mut()[0] += self.bi;
            l.forget.w.data_mut()[0] += self.wf;
            l.forget.u.data_mut()[0] += self.uf;
            l.forget.b.data_mut()[0] += self.bf;
            l.output.w.data_mut()[0] += self.wo;
            l.output.u.data_mut()[0] += self.uo;
            l.output.b.data_mut()[0] += self.bo;
        }
    }
}

/// Scalar mirror of the cell backward pass.
/// Returns `(d_x, d_h_prev, d_c_prev)` and accumulates parameter gradients.
fn scalar_backward(
    kind: CellKind,
    p: &ScalarCell,
    s: &ScalarStep,
    d_h: f64,
    d_c: f64,
    g: &mut ScalarCellGrads,
) -> (f64, f64, f64) {
    let act = kind.candidate_activation();
    match kind {
        CellKind::GruNoUpdate => (0.0, d_h, 0.0),
        CellKind::Lstm => {
            let d_o = d_h * s.tanh_c;
            let d_c_tot = d_c + d_h * s.o * (1.0 - s.tanh_c * s.tanh_c);
            let d_i = d_c_tot * s.cand;
            let d_f = d_c_tot * s.c_prev;
            let d_g = d_c_tot * s.i;
            let d_c_prev = d_c_tot * s.f;

            let da_i = d_i * s.i * (1.0 - s.i);
            let da_f = d_f * s.f * (1.0 - s.f);
            let da_o = d_o * s.o * (1.0 - s.o);
            let da_g = d_g * scalar_activation_grad(s.cand, act);

            g.wi += da_i * s.x; g.ui += da_i * s.h_prev; g.bi += da_i;
            g.wf += da_f * s.x; g.uf += da_f * s.h_prev; g.bf += da_f;
            g.wo += da_o * s.x; g.uo += da_o * s.h_prev; g.bo += da_o;
            g.wh += da_g * s.x; g.uh += da_g * s.h_prev; g.bh += da_g;

            let d_x = p.wi * da_i + p.wf * da_f + p.wo * da_o + p.wh * da_g;
            let d_h_prev = p.ui * da_i + p.uf * da_f + p.uo * da_o + p.uh * da_g;
            (d_x, d_h_prev, d_c_prev)
        }
        _ => {
            let d_z = d_h * (s.h_prev - s.cand);
            let d_cand = d_h * (1.0 - s.z);
            let mut d_h_prev = d_h * s.z;
            let mut d_x = 0.0;

            let da_c = d_cand * scalar_activation_grad(s.cand, act);
            if p.kind_has_reset {
                let gated = s.h_prev * s.r;
                g.wh += da_c * s.x;
                g.uh += da_c * gated;
                g.bh += da_c;
                d_x += p.wh * da_c;
                let d_gated = p.uh * da_c;
                d_h_prev += d_gated * s.r;
                let d_r = d_gated * s.h_prev;
                let da_r = d_r * s.r * (1.0 - s.r);
                g.wr += da_r * s.x;
                g.ur += da_r * s.h_prev;
                g.br += da_r;
                d_h_prev += p.ur * da_r;
                d_x += p.wr * da_r;
            } else {
                g.wh += da_c * s.x;
                g.uh += da_c * s.h_prev;
                g.bh += da_c;
                d_h_prev += p.uh * da_c;
                d_x += p.wh * da_c;
            }

            let da_z = d_z * s.z * (1.0 - s.z);
            g.wz += da_z * s.x;
            g.uz += da_z * s.h_prev;
            g.bz += da_z;
            d_h_prev += p.uz * da_z;
            d_x += p.wz * da_z;
            (d_x, d_h_prev, 0.0)
        }
    }
}

/// Everything a training-mode forward records for the backward pass. One
/// cache covers a whole minibatch: batch normalization pools statistics over
/// all samples' timesteps jointly (N*T rows per stacked layer), so a single
/// cuboid is just the N=1 case.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    training: bool,
    n_samples: usize,
    /// `[layer][sample]` unrolled states over the T timesteps.
    layer_states: Vec<Vec<Vec<CellState>>>,
    /// Per stacked layer: (N*T) x units activated hidden states (the
    /// batch-norm input); row `n*T + t`.
    act_outputs: Vec<Tensor>,
    bn_caches: Vec<Option<BnCache>>,
    /// Per stacked layer pooled batch statistics (training mode only).
    pub bn_stats: Vec<BnBatchStats>,
    /// Per stacked layer: (N*T) x units normalized outputs.
    bn_outputs: Vec<Tensor>,
    /// Final-cell intermediates, indexed `[sample][t][pixel]`.
    final_steps: Vec<Vec<Vec<ScalarStep>>>,
    recons: Vec<Tensor>,
}

/// Per-sample front half of one stacked layer: unroll the cell over the
/// timesteps and apply the inter-layer activation.
fn layer_states_and_act(
    model: &Model,
    cell: &CellParams,
    xs: &[Tensor],
) -> Result<(Vec<CellState>, Vec<Tensor>)> {
    let h0 = Tensor::zeros(vec![cell.hidden_size]);
    let (states, _) = cells::unroll_sequence(cell, xs, &h0)?;
    let act = states
        .iter()
        .map(|st| apply_activation(&st.h, model.config.inter_activation))
        .collect();
    Ok((states, act))
}

/// Per-sample back half of the network: readout then the shared per-pixel
/// cell with the output sigmoid.
fn output_stage_forward(
    model: &Model,
    scalar: &ScalarCell,
    decoder_rows: &[Tensor],
) -> Result<(Tensor, Vec<Vec<ScalarStep>>)> {
    let cfg = &model.config;
    let (t_steps, pixels) = (cfg.t_steps, cfg.frame_pixels);
    let mut readout_out = Tensor::zeros(vec![t_steps, pixels]);
    for (t, h) in decoder_rows.iter().enumerate() {
        let mut y = matvec(&model.readout.weight, h)?;
        y.add_assign(&model.readout.bias)?;
        readout_out.row_mut(t).copy_from_slice(y.data());
    }

    let kind = cfg.cell_kind;
    let mut final_steps = vec![vec![ScalarStep::default(); pixels]; t_steps];
    let mut recon = Tensor::zeros(vec![t_steps, pixels]);
    for px in 0..pixels {
        let mut h = 0.0;
        let mut c = 0.0;
        for t in 0..t_steps {
            let s = scalar_step(kind, scalar, readout_out.row(t)[px], h, c);
            h = s.h;
            c = s.c;
            recon.row_mut(t)[px] = sigmoid(s.h);
            final_steps[t][px] = s;
        }
    }
    Ok((recon, final_steps))
}

fn forward_batch(
    model: &Model,
    inputs: &[&Tensor],
    training: bool,
) -> Result<(Vec<Tensor>, ForwardCache)> {
    let cfg = &model.config;
    if inputs.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    for input in inputs {
        if input.shape() != [cfg.t_steps, cfg.frame_pixels] {
            return Err(Error::dimension(
                "forward_cuboid",
                input.shape_string(),
                format!("{}x{}", cfg.t_steps, cfg.frame_pixels),
            ));
        }
    }
    let t_steps = cfg.t_steps;
    let n = inputs.len();

    // [sample][t] feature vectors flowing between stages.
    let mut current: Vec<Vec<Tensor>> = inputs
        .iter()
        .map(|input| {
            (0..t_steps)
                .map(|t| Tensor::vector(input.row(t).to_vec()))
                .collect()
        })
        .collect();

    let mut layer_states = Vec::with_capacity(model.layers.len());
    let mut act_outputs = Vec::with_capacity(model.layers.len());
    let mut bn_caches = Vec::with_capacity(model.layers.len());
    let mut bn_stats = Vec::with_capacity(model.layers.len());
    let mut bn_outputs = Vec::with_capacity(model.layers.len());

    for (cell, bn) in model.layers.iter().zip(&model.norms) {
        let per_sample = parallel::par_map(&current, |xs| layer_states_and_act(model, cell, xs));
        let mut states_all = Vec::with_capacity(n);
        let units = cell.hidden_size;
        let mut act = Tensor::zeros(vec![n * t_steps, units]);
        for (s, r) in per_sample.into_iter().enumerate() {
            let (states, acts) = r?;
            for (t, a) in acts.iter().enumerate() {
                act.row_mut(s * t_steps + t).copy_from_slice(a.data());
            }
            states_all.push(states);
        }

        let (normed, cache, stats) = bn.forward_pure(&act, training)?;
        for (s, sample) in current.iter_mut().enumerate() {
            for (t, slot) in sample.iter_mut().enumerate() {
                *slot = Tensor::vector(normed.row(s * t_steps + t).to_vec());
            }
        }

        layer_states.push(states_all);
        act_outputs.push(act);
        bn_caches.push(cache);
        if let Some(st) = stats {
            bn_stats.push(st);
        }
        bn_outputs.push(normed);
    }

    let scalar = ScalarCell::from_params(&model.final_cell);
    let outputs = parallel::par_map(&current, |rows| output_stage_forward(model, &scalar, rows));
    let mut recons = Vec::with_capacity(n);
    let mut final_steps = Vec::with_capacity(n);
    for r in outputs {
        let (recon, steps) = r?;
        recons.push(recon);
        final_steps.push(steps);
    }

    let cache = ForwardCache {
        training,
        n_samples: n,
        layer_states,
        act_outputs,
        bn_caches,
        bn_stats,
        bn_outputs,
        final_steps,
        recons: recons.clone(),
    };
    Ok((recons, cache))
}

fn forward_cuboid(model: &Model, input: &Tensor, training: bool) -> Result<(Tensor, ForwardCache)> {
    let (mut recons, cache) = forward_batch(model, &[input], training)?;
    Ok((recons.pop().unwrap(), cache))
}

/// Gradients for every trainable tensor in the model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub layers: Vec<CellParams>,
    /// Per stacked layer `(d_gamma, d_beta)`.
    pub norms: Vec<(Tensor, Tensor)>,
    pub readout_weight: Tensor,
    pub readout_bias: Tensor,
    pub final_cell: CellParams,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        ModelGrads {
            layers: model
                .layers
                .iter()
                .map(|p| CellParams::zeros(p.kind, p.input_size, p.hidden_size))
                .collect(),
            norms: model
                .norms
                .iter()
                .map(|bn| {
                    (
                        Tensor::zeros(vec![bn.features()]),
                        Tensor::zeros(vec![bn.features()]),
                    )
                })
                .collect(),
            readout_weight: Tensor::zeros(model.readout.weight.shape().to_vec()),
            readout_bias: Tensor::zeros(model.readout.bias.shape().to_vec()),
            final_cell: CellParams::zeros(
                model.final_cell.kind,
                model.final_cell.input_size,
                model.final_cell.hidden_size,
            ),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
        for ((ga, ba), (gb, bb)) in self.norms.iter_mut().zip(&other.norms) {
            ga.add_assign(gb).unwrap();
            ba.add_assign(bb).unwrap();
        }
        self.readout_weight.add_assign(&other.readout_weight).unwrap();
        self.readout_bias.add_assign(&other.readout_bias).unwrap();
        self.final_cell.add_assign(&other.final_cell);
    }

    pub fn scale_assign(&mut self, s: f64) {
        for p in &mut self.layers {
            p.scale_assign(s);
        }
        for (g, b) in &mut self.norms {
            g.scale_assign(s);
            b.scale_assign(s);
        }
        self.readout_weight.scale_assign(s);
        self.readout_bias.scale_assign(s);
        self.final_cell.scale_assign(s);
    }

    /// Flat view in the same order as `Model::flatten_trainable`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.layers {
            out.extend(p.flatten());
        }
        for (g, b) in &self.norms {
            out.extend_from_slice(g.data());
            out.extend_from_slice(b.data());
        }
        out.extend_from_slice(self.readout_weight.data());
        out.extend_from_slice(self.readout_bias.data());
        out.extend(self.final_cell.flatten());
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-sample backward through the output sigmoid, the per-pixel final cell
/// and the readout affine. Returns this sample's scalar-cell gradient
/// accumulator, readout gradients and the gradient arriving at the decoder's
/// normalized output rows.
fn output_stage_backward(
    model: &Model,
    recon: &Tensor,
    final_steps: &[Vec<ScalarStep>],
    decoder_rows_base: usize,
    bn_out_last: &Tensor,
    scalar: &ScalarCell,
    d_recon: &Tensor,
) -> Result<(ScalarCellGrads, Tensor, Tensor, Vec<Tensor>)> {
    let cfg = &model.config;
    let (t_steps, pixels) = (cfg.t_steps, cfg.frame_pixels);
    let kind = cfg.cell_kind;

    let mut scalar_grads = ScalarCellGrads::default();
    let mut d_readout_out = Tensor::zeros(vec![t_steps, pixels]);
    for px in 0..pixels {
        let mut carry_h = 0.0;
        let mut carry_c = 0.0;
        for t in (0..t_steps).rev() {
            let out = recon.row(t)[px];
            let d_h = d_recon.row(t)[px] * out * (1.0 - out) + carry_h;
            let step = &final_steps[t][px];
            let (d_x, d_h_prev, d_c_prev) =
                scalar_backward(kind, scalar, step, d_h, carry_c, &mut scalar_grads);
            d_readout_out.row_mut(t)[px] = d_x;
            carry_h = d_h_prev;
            carry_c = d_c_prev;
        }
    }

    let mut d_readout_weight = Tensor::zeros(model.readout.weight.shape().to_vec());
    let mut d_readout_bias = Tensor::zeros(model.readout.bias.shape().to_vec());
    let mut d_decoder = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let d_y = Tensor::vector(d_readout_out.row(t).to_vec());
        let h_dec = Tensor::vector(bn_out_last.row(decoder_rows_base + t).to_vec());
        outer_add_assign(&mut d_readout_weight, &d_y, &h_dec)?;
        d_readout_bias.add_assign(&d_y)?;
        d_decoder.push(matvec_transposed(&model.readout.weight, &d_y)?);
    }
    Ok((scalar_grads, d_readout_weight, d_readout_bias, d_decoder))
}

fn backward_batch(
    model: &Model,
    cache: &ForwardCache,
    d_recons: &[&Tensor],
) -> Result<ModelGrads> {
    if !cache.training {
        return Err(Error::State(
            "backward requires a cache from a training-mode forward".into(),
        ));
    }
    if d_recons.len() != cache.n_samples {
        return Err(Error::dimension(
            "backward_cuboid",
            d_recons.len().to_string(),
            cache.n_samples.to_string(),
        ));
    }
    for (d, r) in d_recons.iter().zip(&cache.recons) {
        if d.shape() != r.shape() {
            return Err(Error::dimension(
                "backward_cuboid",
                d.shape_string(),
                r.shape_string(),
            ));
        }
    }
    let cfg = &model.config;
    let t_steps = cfg.t_steps;
    let n = cache.n_samples;
    let mut grads = ModelGrads::zeros_like(model);

    // Output stage per sample (parallel), folded in sample order.
    let scalar = ScalarCell::from_params(&model.final_cell);
    let last = model.layers.len() - 1;
    let per_sample = parallel::par_map_indices(n, |s| {
        output_stage_backward(
            model,
            &cache.recons[s],
            &cache.final_steps[s],
            s * t_steps,
            &cache.bn_outputs[last],
            &scalar,
            d_recons[s],
        )
    });
    // [sample][t] gradients entering each layer's normalized output.
    let mut d_upper: Vec<Vec<Tensor>> = Vec::with_capacity(n);
    for r in per_sample {
        let (scalar_grads, d_w, d_b, d_dec) = r?;
        scalar_grads.write_into(&mut grads.final_cell);
        grads.readout_weight.add_assign(&d_w)?;
        grads.readout_bias.add_assign(&d_b)?;
        d_upper.push(d_dec);
    }

    // Stacked layers, top down: batch norm over the pooled rows, the inter
    // activation, then each sample's cell recurrence.
    for l in (0..model.layers.len()).rev() {
        let units = model.layers[l].hidden_size;
        let mut d_bn_out = Tensor::zeros(vec![n * t_steps, units]);
        for (s, ds) in d_upper.iter().enumerate() {
            for (t, d) in ds.iter().enumerate() {
                d_bn_out.row_mut(s * t_steps + t).copy_from_slice(d.data());
            }
        }
        let bn_cache = cache.bn_caches[l]
            .as_ref()
            .ok_or_else(|| Error::State("missing batch-norm cache".into()))?;
        let (d_act, d_gamma, d_beta) = model.norms[l].backward(bn_cache, &d_bn_out)?;
        grads.norms[l].0.add_assign(&d_gamma)?;
        grads.norms[l].1.add_assign(&d_beta)?;

        let act = &cache.act_outputs[l];
        let states = &cache.layer_states[l];
        let seqs = parallel::par_map_indices(n, |s| {
            let mut d_h_steps = Vec::with_capacity(t_steps);
            for t in 0..t_steps {
                let row = s * t_steps + t;
                let a = Tensor::vector(act.row(row).to_vec());
                let grad = activation_grad(&a, cfg.inter_activation);
                d_h_steps.push(Tensor::vector(
                    d_act
                        .row(row)
                        .iter()
                        .zip(grad.data())
                        .map(|(x, g)| x * g)
                        .collect(),
                ));
            }
            cells::sequence_backward(&model.layers[l], &states[s], &d_h_steps)
        });
        let mut next_upper = Vec::with_capacity(n);
        for r in seqs {
            let seq = r?;
            grads.layers[l].add_assign(&seq.by_param);
            next_upper.push(seq.d_inputs);
        }
        d_upper = next_upper;
    }

    Ok(grads)
}

fn backward_cuboid(model: &Model, cache: &ForwardCache, d_recon: &Tensor) -> Result<ModelGrads> {
    backward_batch(model, cache, &[d_recon])
}
