//! Recurrent cell variants: forward step, analytic backward step, sequence
//! unrolling, and a finite-difference oracle used to verify the analytic
//! gradients.
//!
//! Six variants are supported. The gated family differs only in which gates
//! exist and which activation produces the candidate state:
//!
//! * `Gru`               - update + reset gates, tanh candidate
//! * `Sitgru`            - update gate only, sigmoid candidate
//! * `SitgruTanhNoReset` - update gate only, tanh candidate
//! * `SitgruRelu`        - update gate only, relu candidate
//! * `GruNoUpdate`       - reset gate only; the hidden state never updates
//! * `Lstm`              - conventional input/forget/output gates with an
//!   internal cell memory

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::blob;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{
    activation_grad, apply_activation, hadamard, matvec, matvec_transposed, outer_add_assign,
    ActivationKind, Tensor,
};

/// Central-difference step used by every finite-difference check in the crate.
pub const FD_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Gru,
    Sitgru,
    #[serde(rename = "sitgru_tanh")]
    SitgruTanhNoReset,
    #[serde(rename = "sitgru_relu")]
    SitgruRelu,
    GruNoUpdate,
    Lstm,
}

pub const ALL_CELL_KINDS: [CellKind; 6] = [
    CellKind::Gru,
    CellKind::Sitgru,
    CellKind::SitgruTanhNoReset,
    CellKind::SitgruRelu,
    CellKind::GruNoUpdate,
    CellKind::Lstm,
];

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Sitgru => "sitgru",
            CellKind::SitgruTanhNoReset => "sitgru_tanh",
            CellKind::SitgruRelu => "sitgru_relu",
            CellKind::GruNoUpdate => "gru_no_update",
            CellKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(CellKind::Gru),
            "sitgru" => Ok(CellKind::Sitgru),
            "sitgru_tanh" => Ok(CellKind::SitgruTanhNoReset),
            "sitgru_relu" => Ok(CellKind::SitgruRelu),
            "gru_no_update" => Ok(CellKind::GruNoUpdate),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Argument(format!("unknown cell kind '{other}'"))),
        }
    }

    pub fn has_update_gate(self) -> bool {
        matches!(
            self,
            CellKind::Gru | CellKind::Sitgru | CellKind::SitgruTanhNoReset | CellKind::SitgruRelu
        )
    }

    pub fn has_reset_gate(self) -> bool {
        matches!(self, CellKind::Gru | CellKind::GruNoUpdate)
    }

    /// Activation producing the candidate state (LSTM: the cell input `g`).
    pub fn candidate_activation(self) -> ActivationKind {
        match self {
            CellKind::Sitgru => ActivationKind::Sigmoid,
            CellKind::SitgruRelu => ActivationKind::Relu,
            _ => ActivationKind::Tanh,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One gate's trainable parameters: feed-forward weight `w` (hidden x input),
/// recurrent weight `u` (hidden x hidden) and bias `b` (hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl GateParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        GateParams {
            w: Tensor::zeros(vec![hidden, input]),
            u: Tensor::zeros(vec![hidden, hidden]),
            b: Tensor::zeros(vec![hidden]),
        }
    }

    fn init(input: usize, hidden: usize, master: u64, stream: &str) -> Self {
        GateParams {
            w: glorot(hidden, input, master, &format!("{stream}.w")),
            u: glorot(hidden, hidden, master, &format!("{stream}.u")),
            b: Tensor::zeros(vec![hidden]),
        }
    }

    fn add_assign(&mut self, other: &GateParams) {
        self.w.add_assign(&other.w).unwrap();
        self.u.add_assign(&other.u).unwrap();
        self.b.add_assign(&other.b).unwrap();
    }

    fn scale_assign(&mut self, s: f64) {
        self.w.scale_assign(s);
        self.u.scale_assign(s);
        self.b.scale_assign(s);
    }
}

/// Uniform init in +/- sqrt(6 / (fan_in + fan_out)), drawn from a named
/// stream so matrices never share or shift sequences.
fn glorot(rows: usize, cols: usize, master: u64, stream: &str) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = seed::rng(master, stream);
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGates {
    pub input: GateParams,
    pub forget: GateParams,
    pub output: GateParams,
}

/// Full parameter set of one cell. Which optional gates are present is
/// determined by the kind and checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    /// Update gate `z` (absent for `GruNoUpdate` and `Lstm`).
    pub update: Option<GateParams>,
    /// Reset gate `r` (present only for `Gru` and `GruNoUpdate`).
    pub reset: Option<GateParams>,
    pub lstm: Option<LstmGates>,
    /// Candidate state parameters (LSTM: the cell input `g`).
    pub candidate: GateParams,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input_size: usize, hidden_size: usize) -> Self {
        let gate = || GateParams::zeros(input_size, hidden_size);
        CellParams {
            kind,
            input_size,
            hidden_size,
            update: kind.has_update_gate().then(gate),
            reset: kind.has_reset_gate().then(gate),
            lstm: (kind == CellKind::Lstm).then(|| LstmGates {
                input: gate(),
                forget: gate(),
                output: gate(),
            }),
            candidate: gate(),
        }
    }

    /// Seeded initialization; `stream` names this cell inside the model so
    /// adding layers never perturbs other layers' weights.
    pub fn init(
        kind: CellKind,
        input_size: usize,
        hidden_size: usize,
        master: u64,
        stream: &str,
    ) -> Self {
        let gate = |g: &str| GateParams::init(input_size, hidden_size, master, &format!("{stream}.{g}"));
        CellParams {
            kind,
            input_size,
            hidden_size,
            update: kind.has_update_gate().then(|| gate("z")),
            reset: kind.has_reset_gate().then(|| gate("r")),
            lstm: (kind == CellKind::Lstm).then(|| LstmGates {
                input: gate("i"),
                forget: gate("f"),
                output: gate("o"),
            }),
            candidate: gate("h"),
        }
    }

    /// Gates in declared order, paired with their serialization tags.
    fn gates(&self) -> Vec<(&'static str, &GateParams)> {
        let mut v = Vec::new();
        if let Some(g) = &self.update {
            v.push(("z", g));
        }
        if let Some(g) = &self.reset {
            v.push(("r", g));
        }
        if let Some(l) = &self.lstm {
            v.push(("i", &l.input));
            v.push(("f", &l.forget));
            v.push(("o", &l.output));
        }
        v.push(("h", &self.candidate));
        v
    }

    fn gates_mut(&mut self) -> Vec<&mut GateParams> {
        let mut v = Vec::new();
        if let Some(g) = &mut self.update {
            v.push(g);
        }
        if let Some(g) = &mut self.reset {
            v.push(g);
        }
        if let Some(l) = &mut self.lstm {
            v.push(&mut l.input);
            v.push(&mut l.forget);
            v.push(&mut l.output);
        }
        v.push(&mut self.candidate);
        v
    }

    pub fn visit(&self, f: &mut impl FnMut(&Tensor)) {
        for (_, g) in self.gates() {
            f(&g.w);
            f(&g.u);
            f(&g.b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        for g in self.gates_mut() {
            f(&mut g.w);
            f(&mut g.u);
            f(&mut g.b);
        }
    }

    pub fn param_len(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        self.visit(&mut |t| out.extend_from_slice(t.data()));
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_len() {
            return Err(Error::Argument(format!(
                "flat parameter length {} does not match cell ({})",
                values.len(),
                self.param_len()
            )));
        }
        let mut off = 0;
        self.visit_mut(&mut |t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        });
        Ok(())
    }

    pub fn add_assign(&mut self, other: &CellParams) {
        debug_assert_eq!(self.kind, other.kind);
        if let (Some(a), Some(b)) = (&mut self.update, &other.update) {
            a.add_assign(b);
        }
        if let (Some(a), Some(b)) = (&mut self.reset, &other.reset) {
            a.add_assign(b);
        }
        if let (Some(a), Some(b)) = (&mut self.lstm, &other.lstm) {
            a.input.add_assign(&b.input);
            a.forget.add_assign(&b.forget);
            a.output.add_assign(&b.output);
        }
        self.candidate.add_assign(&other.candidate);
    }

    pub fn scale_assign(&mut self, s: f64) {
        for g in self.gates_mut() {
            g.scale_assign(s);
        }
    }

    /// Serialization order of the weight blob, e.g. `["w_z","u_z","b_z",...]`.
    pub fn blob_order(&self) -> Vec<String> {
        let mut order = Vec::new();
        for (tag, _) in self.gates() {
            order.push(format!("w_{tag}"));
            order.push(format!("u_{tag}"));
            order.push(format!("b_{tag}"));
        }
        order
    }

    fn check_step_shapes(&self, x: &Tensor, h_prev: &Tensor) -> Result<()> {
        if x.shape() != [self.input_size] {
            return Err(Error::dimension(
                "cell_step input",
                x.shape_string(),
                self.input_size.to_string(),
            ));
        }
        if h_prev.shape() != [self.hidden_size] {
            return Err(Error::dimension(
                "cell_step hidden",
                h_prev.shape_string(),
                self.hidden_size.to_string(),
            ));
        }
        Ok(())
    }
}

/// Closed-form trainable parameter count for hidden size `n`, input size `d`.
pub fn param_count(kind: CellKind, d: usize, n: usize) -> usize {
    let per_gate = d * n + n * n + n;
    let gates = match kind {
        CellKind::Gru => 3,
        CellKind::Sitgru | CellKind::SitgruTanhNoReset | CellKind::SitgruRelu => 2,
        CellKind::GruNoUpdate => 2,
        CellKind::Lstm => 4,
    };
    gates * per_gate
}

/// Intermediates stored by a forward step for the analytic backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub z: Option<Tensor>,
    pub r: Option<Tensor>,
    /// Activated candidate state (LSTM: `g`).
    pub candidate: Tensor,
    pub c_prev: Option<Tensor>,
    pub tanh_c: Option<Tensor>,
    pub i: Option<Tensor>,
    pub f: Option<Tensor>,
    pub o: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct CellState {
    pub h: Tensor,
    /// LSTM internal cell memory; `None` for the GRU family.
    pub c: Option<Tensor>,
    pub cache: Option<StepCache>,
}

/// Gradients mirroring `CellParams`, plus the gradients flowing to the
/// previous hidden state and the input.
#[derive(Debug, Clone)]
pub struct CellGrads {
    pub by_param: CellParams,
    pub d_h_prev: Tensor,
    pub d_x: Tensor,
    pub d_c_prev: Option<Tensor>,
}

fn gate_preact(g: &GateParams, x: &Tensor, h: &Tensor) -> Result<Tensor> {
    let mut t = matvec(&g.w, x)?;
    t.add_assign(&matvec(&g.u, h)?)?;
    t.add_assign(&g.b)?;
    Ok(t)
}

/// Candidate state from its pre-activation; exposed so tests can force the
/// pre-activation and observe the kind-specific activation alone.
pub fn candidate_from_preact(kind: CellKind, preact: &Tensor) -> Tensor {
    apply_activation(preact, kind.candidate_activation())
}

/// Convex mix `z (.) h_prev + (1 - z) (.) candidate`.
fn gate_mix(z: &Tensor, h_prev: &Tensor, candidate: &Tensor) -> Tensor {
    let data = z
        .data()
        .iter()
        .zip(h_prev.data())
        .zip(candidate.data())
        .map(|((&zv, &hv), &cv)| zv * hv + (1.0 - zv) * cv)
        .collect();
    Tensor::new(vec![z.len()], data).unwrap()
}

fn gru_step_impl(
    p: &CellParams,
    x: &Tensor,
    h_prev: &Tensor,
    reset_override: Option<&Tensor>,
) -> Result<CellState> {
    p.check_step_shapes(x, h_prev)?;
    let update = p.update.as_ref().expect("gru params carry an update gate");
    let reset = p.reset.as_ref().expect("gru params carry a reset gate");

    let z = apply_activation(&gate_preact(update, x, h_prev)?, ActivationKind::Sigmoid);
    let r = match reset_override {
        Some(forced) => forced.clone(),
        None => apply_activation(&gate_preact(reset, x, h_prev)?, ActivationKind::Sigmoid),
    };
    let gated_h = hadamard(h_prev, &r)?;
    let candidate =
        candidate_from_preact(p.kind, &gate_preact(&p.candidate, x, &gated_h)?);
    let h = gate_mix(&z, h_prev, &candidate);
    Ok(CellState {
        h,
        c: None,
        cache: Some(StepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z: Some(z),
            r: Some(r),
            candidate,
            c_prev: None,
            tanh_c: None,
            i: None,
            f: None,
            o: None,
        }),
    })
}

/// Standard two-gate cell: update and reset gates, tanh candidate computed
/// from the reset-gated previous state.
pub fn gru_step(p: &CellParams, x: &Tensor, h_prev: &Tensor) -> Result<CellState> {
    gru_step_impl(p, x, h_prev, None)
}

/// Test hook: a gru forward step with the reset gate forced to all ones. With
/// identical remaining parameters this must match the no-reset tanh variant
/// bit for bit.
pub fn gru_step_reset_ones(p: &CellParams, x: &Tensor, h_prev: &Tensor) -> Result<CellState> {
    let ones = Tensor::new(vec![p.hidden_size], vec![1.0; p.hidden_size])?;
    gru_step_impl(p, x, h_prev, Some(&ones))
}

/// Single-gate cell: update gate plus a candidate computed directly from the
/// previous state. The candidate activation is selected by the kind (sigmoid,
/// tanh or relu).
pub fn sitgru_step(p: &CellParams, x: &Tensor, h_prev: &Tensor) -> Result<CellState> {
    p.check_step_shapes(x, h_prev)?;
    debug_assert!(p.reset.is_none(), "single-gate params carry no reset gate");
    let update = p.update.as_ref().expect("single-gate params carry an update gate");

    let z = apply_activation(&gate_preact(update, x, h_prev)?, ActivationKind::Sigmoid);
    let candidate = candidate_from_preact(p.kind, &gate_preact(&p.candidate, x, h_prev)?);
    let h = gate_mix(&z, h_prev, &candidate);
    Ok(CellState {
        h,
        c: None,
        cache: Some(StepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z: Some(z),
            r: None,
            candidate,
            c_prev: None,
            tanh_c: None,
            i: None,
            f: None,
            o: None,
        }),
    })
}

/// Reset-gate-only ablation: the gate and candidate are computed (and cached
/// for inspection) but the hidden state passes through unchanged.
pub fn noupdate_step(p: &CellParams, x: &Tensor, h_prev: &Tensor) -> Result<CellState> {
    p.check_step_shapes(x, h_prev)?;
    let reset = p.reset.as_ref().expect("no-update params carry a reset gate");

    let r = apply_activation(&gate_preact(reset, x, h_prev)?, ActivationKind::Sigmoid);
    let gated_h = hadamard(h_prev, &r)?;
    let candidate =
        candidate_from_preact(p.kind, &gate_preact(&p.candidate, x, &gated_h)?);
    Ok(CellState {
        h: h_prev.clone(),
        c: None,
        cache: Some(StepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z: None,
            r: Some(r),
            candidate,
            c_prev: None,
            tanh_c: None,
            i: None,
            f: None,
            o: None,
        }),
    })
}

/// Conventional three-gate cell with internal memory `c` and tanh cell
/// activation.
pub fn lstm_step(
    p: &CellParams,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<CellState> {
    p.check_step_shapes(x, h_prev)?;
    let gates = p.lstm.as_ref().expect("lstm params carry i/f/o gates");

    let i = apply_activation(&gate_preact(&gates.input, x, h_prev)?, ActivationKind::Sigmoid);
    let f = apply_activation(&gate_preact(&gates.forget, x, h_prev)?, ActivationKind::Sigmoid);
    let o = apply_activation(&gate_preact(&gates.output, x, h_prev)?, ActivationKind::Sigmoid);
    let g = candidate_from_preact(p.kind, &gate_preact(&p.candidate, x, h_prev)?);

    let c = hadamard(&f, c_prev)?.add(&hadamard(&i, &g)?)?;
    let tanh_c = apply_activation(&c, ActivationKind::Tanh);
    let h = hadamard(&o, &tanh_c)?;
    Ok(CellState {
        h,
        c: Some(c),
        cache: Some(StepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z: None,
            r: None,
            candidate: g,
            c_prev: Some(c_prev.clone()),
            tanh_c: Some(tanh_c),
            i: Some(i),
            f: Some(f),
            o: Some(o),
        }),
    })
}

/// Kind dispatcher. `c_prev` is required only for LSTM; `None` means a zero
/// memory.
pub fn cell_step(
    p: &CellParams,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: Option<&Tensor>,
) -> Result<CellState> {
    match p.kind {
        CellKind::Gru => gru_step(p, x, h_prev),
        CellKind::Sitgru | CellKind::SitgruTanhNoReset | CellKind::SitgruRelu => {
            sitgru_step(p, x, h_prev)
        }
        CellKind::GruNoUpdate => noupdate_step(p, x, h_prev),
        CellKind::Lstm => {
            let zero;
            let c = match c_prev {
                Some(c) => c,
                None => {
                    zero = Tensor::zeros(vec![p.hidden_size]);
                    &zero
                }
            };
            lstm_step(p, x, h_prev, c)
        }
    }
}

/// Gradient accumulation for one gate given the pre-activation gradient.
fn accumulate_gate(
    grads: &mut GateParams,
    u: &Tensor,
    w: &Tensor,
    da: &Tensor,
    x: &Tensor,
    recurrent_in: &Tensor,
    d_h_prev: &mut Tensor,
    d_x: &mut Tensor,
) -> Result<()> {
    outer_add_assign(&mut grads.w, da, x)?;
    outer_add_assign(&mut grads.u, da, recurrent_in)?;
    grads.b.add_assign(da)?;
    d_h_prev.add_assign(&matvec_transposed(u, da)?)?;
    d_x.add_assign(&matvec_transposed(w, da)?)?;
    Ok(())
}

/// Exact gradients of a scalar loss with respect to all parameters, the
/// previous hidden state and the input, given the upstream gradient `d_h`
/// (and `d_c` for LSTM). Gradient flows through both the gate path and the
/// candidate path of the convex mix.
pub fn cell_backward(
    p: &CellParams,
    state: &CellState,
    d_h: &Tensor,
    d_c: Option<&Tensor>,
) -> Result<CellGrads> {
    let cache = state
        .cache
        .as_ref()
        .ok_or_else(|| Error::State("cell backward requires a forward cache".into()))?;
    if d_h.shape() != [p.hidden_size] {
        return Err(Error::dimension(
            "cell_backward",
            d_h.shape_string(),
            p.hidden_size.to_string(),
        ));
    }

    let mut grads = CellParams::zeros(p.kind, p.input_size, p.hidden_size);
    let mut d_h_prev = Tensor::zeros(vec![p.hidden_size]);
    let mut d_x = Tensor::zeros(vec![p.input_size]);
    let mut d_c_prev = None;

    match p.kind {
        CellKind::GruNoUpdate => {
            // h_t = h_{t-1}: the upstream gradient passes through unchanged
            // and no parameter ever reaches the output.
            d_h_prev = d_h.clone();
        }
        CellKind::Lstm => {
            let gates = p.lstm.as_ref().unwrap();
            let ggrads = grads.lstm.as_mut().unwrap();
            let (i, f, o) = (
                cache.i.as_ref().unwrap(),
                cache.f.as_ref().unwrap(),
                cache.o.as_ref().unwrap(),
            );
            let g = &cache.candidate;
            let c_prev = cache.c_prev.as_ref().unwrap();
            let tanh_c = cache.tanh_c.as_ref().unwrap();

            let d_o = hadamard(d_h, tanh_c)?;
            let mut d_c_total = hadamard(
                &hadamard(d_h, o)?,
                &activation_grad(tanh_c, ActivationKind::Tanh),
            )?;
            if let Some(dc) = d_c {
                d_c_total.add_assign(dc)?;
            }

            let d_i = hadamard(&d_c_total, g)?;
            let d_f = hadamard(&d_c_total, c_prev)?;
            let d_g = hadamard(&d_c_total, i)?;
            d_c_prev = Some(hadamard(&d_c_total, f)?);

            let da_i = hadamard(&d_i, &activation_grad(i, ActivationKind::Sigmoid))?;
            let da_f = hadamard(&d_f, &activation_grad(f, ActivationKind::Sigmoid))?;
            let da_o = hadamard(&d_o, &activation_grad(o, ActivationKind::Sigmoid))?;
            let da_g = hadamard(&d_g, &activation_grad(g, p.kind.candidate_activation()))?;

            accumulate_gate(
                &mut ggrads.input, &gates.input.u, &gates.input.w,
                &da_i, &cache.x, &cache.h_prev, &mut d_h_prev, &mut d_x,
            )?;
            accumulate_gate(
                &mut ggrads.forget, &gates.forget.u, &gates.forget.w,
                &da_f, &cache.x, &cache.h_prev, &mut d_h_prev, &mut d_x,
            )?;
            accumulate_gate(
                &mut ggrads.output, &gates.output.u, &gates.output.w,
                &da_o, &cache.x, &cache.h_prev, &mut d_h_prev, &mut d_x,
            )?;
            accumulate_gate(
                &mut grads.candidate, &p.candidate.u, &p.candidate.w,
                &da_g, &cache.x, &cache.h_prev, &mut d_h_prev, &mut d_x,
            )?;
        }
        _ => {
            // Gated family: h = z (.) h_prev + (1 - z) (.) candidate.
            let z = cache.z.as_ref().expect("gated cache carries z");
            let candidate = &cache.candidate;
            let h_prev = &cache.h_prev;

            // d z = d_h (.) (h_prev - candidate); d candidate = d_h (.) (1 - z)
            let d_z = hadamard(d_h, &h_prev.sub(candidate)?)?;
            let one_minus_z = z.map(|v| 1.0 - v);
            let d_cand = hadamard(d_h, &one_minus_z)?;
            d_h_prev.add_assign(&hadamard(d_h, z)?)?;

            let da_cand = hadamard(&d_cand, &activation_grad(candidate, p.kind.candidate_activation()))?;

            if p.kind == CellKind::Gru {
                let r = cache.r.as_ref().expect("gru cache carries r");
                let gated_h = hadamard(h_prev, r)?;
                // Candidate gate: recurrent input was h_prev (.) r.
                outer_add_assign(&mut grads.candidate.w, &da_cand, &cache.x)?;
                outer_add_assign(&mut grads.candidate.u, &da_cand, &gated_h)?;
                grads.candidate.b.add_assign(&da_cand)?;
                d_x.add_assign(&matvec_transposed(&p.candidate.w, &da_cand)?)?;

                let d_gated = matvec_transposed(&p.candidate.u, &da_cand)?;
                d_h_prev.add_assign(&hadamard(&d_gated, r)?)?;
                let d_r = hadamard(&d_gated, h_prev)?;

                let da_r = hadamard(&d_r, &activation_grad(r, ActivationKind::Sigmoid))?;
                let reset = p.reset.as_ref().unwrap();
                accumulate_gate(
                    grads.reset.as_mut().unwrap(), &reset.u, &reset.w,
                    &da_r, &cache.x, h_prev, &mut d_h_prev, &mut d_x,
                )?;
            } else {
                accumulate_gate(
                    &mut grads.candidate, &p.candidate.u, &p.candidate.w,
                    &da_cand, &cache.x, h_prev, &mut d_h_prev, &mut d_x,
                )?;
            }

            let da_z = hadamard(&d_z, &activation_grad(z, ActivationKind::Sigmoid))?;
            let update = p.update.as_ref().unwrap();
            accumulate_gate(
                grads.update.as_mut().unwrap(), &update.u, &update.w,
                &da_z, &cache.x, h_prev, &mut d_h_prev, &mut d_x,
            )?;
        }
    }

    Ok(CellGrads {
        by_param: grads,
        d_h_prev,
        d_x,
        d_c_prev,
    })
}

/// Unroll the cell over a sequence; `states[t]` is computed from
/// `states[t-1].h` (LSTM also chains the cell memory, starting from zero).
pub fn unroll_sequence(
    p: &CellParams,
    xs: &[Tensor],
    h0: &Tensor,
) -> Result<(Vec<CellState>, Tensor)> {
    if xs.is_empty() {
        return Err(Error::Argument("cannot unroll an empty sequence".into()));
    }
    let mut states = Vec::with_capacity(xs.len());
    let mut h = h0.clone();
    let mut c = (p.kind == CellKind::Lstm).then(|| Tensor::zeros(vec![p.hidden_size]));
    for x in xs {
        let state = cell_step(p, x, &h, c.as_ref())?;
        h = state.h.clone();
        c = state.c.clone();
        states.push(state);
    }
    Ok((states, h))
}

/// Gradients accumulated over a full unrolled sequence.
#[derive(Debug, Clone)]
pub struct SequenceGrads {
    /// Parameter gradients summed across steps, in parameter slots.
    pub by_param: CellParams,
    pub d_h0: Tensor,
    pub d_inputs: Vec<Tensor>,
}

/// Backward through time over unrolled states. `d_h_steps[t]` is the upstream
/// gradient arriving at `states[t].h` from outside the recurrence; parameter
/// gradients are accumulated by summation across steps.
pub fn sequence_backward(
    p: &CellParams,
    states: &[CellState],
    d_h_steps: &[Tensor],
) -> Result<SequenceGrads> {
    if states.is_empty() || states.len() != d_h_steps.len() {
        return Err(Error::Argument(format!(
            "sequence_backward needs matching non-empty states/grads, got {}/{}",
            states.len(),
            d_h_steps.len()
        )));
    }
    let mut by_param = CellParams::zeros(p.kind, p.input_size, p.hidden_size);
    let mut d_inputs = vec![Tensor::zeros(vec![p.input_size]); states.len()];
    let mut carry_h = Tensor::zeros(vec![p.hidden_size]);
    let mut carry_c: Option<Tensor> = None;
    for t in (0..states.len()).rev() {
        let mut d_h = d_h_steps[t].clone();
        d_h.add_assign(&carry_h)?;
        let g = cell_backward(p, &states[t], &d_h, carry_c.as_ref())?;
        by_param.add_assign(&g.by_param);
        d_inputs[t] = g.d_x;
        carry_h = g.d_h_prev;
        carry_c = g.d_c_prev;
    }
    Ok(SequenceGrads {
        by_param,
        d_h0: carry_h,
        d_inputs,
    })
}

/// Central-difference gradient oracle over an unrolled sequence. `loss` must
/// be a deterministic scalar function of the states and the final hidden
/// state; it is re-evaluated at +/- `FD_EPSILON` per component, fully
/// independent of the analytic backward path.
pub fn finite_diff_grad(
    p: &CellParams,
    xs: &[Tensor],
    h0: &Tensor,
    loss: impl Fn(&[CellState], &Tensor) -> f64,
) -> Result<SequenceGrads> {
    let eval = |p: &CellParams, xs: &[Tensor], h0: &Tensor| -> Result<f64> {
        let (states, h_last) = unroll_sequence(p, xs, h0)?;
        Ok(loss(&states, &h_last))
    };

    let mut flat = p.flatten();
    let mut by_param = CellParams::zeros(p.kind, p.input_size, p.hidden_size);
    let mut grads_flat = vec![0.0; flat.len()];
    let mut work = p.clone();
    for idx in 0..flat.len() {
        let orig = flat[idx];
        flat[idx] = orig + FD_EPSILON;
        work.assign_flat(&flat)?;
        let plus = eval(&work, xs, h0)?;
        flat[idx] = orig - FD_EPSILON;
        work.assign_flat(&flat)?;
        let minus = eval(&work, xs, h0)?;
        flat[idx] = orig;
        grads_flat[idx] = (plus - minus) / (2.0 * FD_EPSILON);
    }
    by_param.assign_flat(&grads_flat)?;

    let mut h0_var = h0.clone();
    let mut d_h0 = Tensor::zeros(vec![p.hidden_size]);
    for idx in 0..h0.len() {
        let orig = h0_var.data()[idx];
        h0_var.data_mut()[idx] = orig + FD_EPSILON;
        let plus = eval(p, xs, &h0_var)?;
        h0_var.data_mut()[idx] = orig - FD_EPSILON;
        let minus = eval(p, xs, &h0_var)?;
        h0_var.data_mut()[idx] = orig;
        d_h0.data_mut()[idx] = (plus - minus) / (2.0 * FD_EPSILON);
    }

    let mut xs_var: Vec<Tensor> = xs.to_vec();
    let mut d_inputs = vec![Tensor::zeros(vec![p.input_size]); xs.len()];
    for t in 0..xs.len() {
        for idx in 0..xs[t].len() {
            let orig = xs_var[t].data()[idx];
            xs_var[t].data_mut()[idx] = orig + FD_EPSILON;
            let plus = eval(p, &xs_var, h0)?;
            xs_var[t].data_mut()[idx] = orig - FD_EPSILON;
            let minus = eval(p, &xs_var, h0)?;
            xs_var[t].data_mut()[idx] = orig;
            d_inputs[t].data_mut()[idx] = (plus - minus) / (2.0 * FD_EPSILON);
        }
    }

    Ok(SequenceGrads {
        by_param,
        d_h0,
        d_inputs,
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ParamsHeader {
    format: String,
    kind: CellKind,
    input_size: usize,
    hidden_size: usize,
    order: Vec<String>,
}

/// Write cell parameters: one JSON header line, then the weights as a flat
/// little-endian f64 blob in the header's declared order.
pub fn save_params(path: &Path, p: &CellParams) -> Result<()> {
    let header = ParamsHeader {
        format: "sitgru-cell-params".into(),
        kind: p.kind,
        input_size: p.input_size,
        hidden_size: p.hidden_size,
        order: p.blob_order(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    blob::write_f64s(&mut w, &p.flatten()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<CellParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header_bytes = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte).map_err(|e| Error::io(path, e))?;
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: ParamsHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if header.format != "sitgru-cell-params" {
        return Err(Error::format(path, format!("unexpected format '{}'", header.format)));
    }
    let mut params = CellParams::zeros(header.kind, header.input_size, header.hidden_size);
    if header.order != params.blob_order() {
        return Err(Error::format(path, "weight order does not match cell kind"));
    }
    let values =
        blob::read_f64s(&mut r, params.param_len()).map_err(|e| Error::io(path, e))?;
    params.assign_flat(&values)?;
    Ok(params)
}
