//! Two-branch success model.
//!
//! The history branch runs a forward LSTM left to right and a backward LSTM
//! right to left over the encoded terms, both from zero state. The query
//! branch embeds the candidate combination through a ReLU layer. The final
//! forward state, the final backward state and the query embedding are
//! concatenated, passed through a ReLU merge layer and a sigmoid output unit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{
    glorot_fill, lstm_cell_backward, lstm_cell_forward, sigmoid, CellCache, CellInput, Gate, LstmCellParams,
};
use super::matrix::Matrix;
use crate::encoder::{QueryCombo, TermStep};
use crate::error::{Error, Result};
use crate::transcript::GradeCategory;

/// Clamp applied to probabilities inside the loss.
pub const BCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Catalog size.
    #[serde(rename = "C")]
    pub catalog: usize,
    /// Hidden units per LSTM direction.
    #[serde(rename = "H")]
    pub hidden: usize,
    /// Query embedding width.
    #[serde(rename = "K")]
    pub combo: usize,
    /// Merge layer width.
    #[serde(rename = "M")]
    pub merge: usize,
}

impl Dims {
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_COMBO: usize = 32;
    pub const DEFAULT_MERGE: usize = 64;

    pub fn with_catalog(catalog: usize) -> Self {
        Dims {
            catalog,
            hidden: Self::DEFAULT_HIDDEN,
            combo: Self::DEFAULT_COMBO,
            merge: Self::DEFAULT_MERGE,
        }
    }

    pub fn term_size(&self) -> usize {
        self.catalog * GradeCategory::COUNT
    }

    pub fn merge_input(&self) -> usize {
        2 * self.hidden + self.combo
    }

    pub fn validate(&self) -> Result<()> {
        if self.catalog == 0 || self.hidden == 0 || self.combo == 0 || self.merge == 0 {
            return Err(Error::dim(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Affine layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Matrix::zeros(output, input),
            b: Matrix::zeros(output, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub fwd: LstmCellParams,
    pub bwd: LstmCellParams,
    pub combo: Dense,
    pub merge: Dense,
    pub out: Dense,
}

impl ModelParams {
    /// All-zero parameters; also serves as the gradient accumulator.
    pub fn zeros(dims: Dims) -> Self {
        ModelParams {
            dims,
            fwd: LstmCellParams::zeros(dims.term_size(), dims.hidden),
            bwd: LstmCellParams::zeros(dims.term_size(), dims.hidden),
            combo: Dense::zeros(dims.catalog, dims.combo),
            merge: Dense::zeros(dims.merge_input(), dims.merge),
            out: Dense::zeros(dims.merge, 1),
        }
    }

    /// Seeded Glorot-uniform initialisation with forget-gate biases at 1.
    pub fn init(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fwd = LstmCellParams::init(dims.term_size(), dims.hidden, &mut rng);
        let bwd = LstmCellParams::init(dims.term_size(), dims.hidden, &mut rng);
        let mut p = ModelParams {
            fwd,
            bwd,
            ..ModelParams::zeros(dims)
        };
        glorot_fill(&mut p.combo.w, &mut rng);
        glorot_fill(&mut p.merge.w, &mut rng);
        glorot_fill(&mut p.out.w, &mut rng);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.dims)
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::with_capacity(30);
        for (prefix, cell) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            for gate in Gate::ALL {
                let g = gate as usize;
                let s = gate.suffix();
                out.push((format!("{prefix}.W_{s}"), &cell.w[g]));
                out.push((format!("{prefix}.U_{s}"), &cell.u[g]));
                out.push((format!("{prefix}.b_{s}"), &cell.b[g]));
            }
        }
        for (prefix, layer) in [("combo", &self.combo), ("merge", &self.merge), ("out", &self.out)] {
            out.push((format!("{prefix}.W"), &layer.w));
            out.push((format!("{prefix}.b"), &layer.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::with_capacity(30);
        for (prefix, cell) in [("fwd", &mut self.fwd), ("bwd", &mut self.bwd)] {
            let LstmCellParams { w, u, b } = cell;
            for ((gate, (w, u)), b) in Gate::ALL.iter().zip(w.iter_mut().zip(u.iter_mut())).zip(b.iter_mut()) {
                let s = gate.suffix();
                out.push((format!("{prefix}.W_{s}"), w));
                out.push((format!("{prefix}.U_{s}"), u));
                out.push((format!("{prefix}.b_{s}"), b));
            }
        }
        for (prefix, layer) in [("combo", &mut self.combo), ("merge", &mut self.merge), ("out", &mut self.out)] {
            out.push((format!("{prefix}.W"), &mut layer.w));
            out.push((format!("{prefix}.b"), &mut layer.b));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Checks every tensor shape against `dims`.
    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dims;
        d.validate()?;
        for cell in [&self.fwd, &self.bwd] {
            cell.check_shapes()?;
            if cell.input_size() != d.term_size() || cell.hidden_size() != d.hidden {
                return Err(Error::dim("LSTM cell does not match model dimensions"));
            }
        }
        for (name, layer, input, output) in [
            ("combo", &self.combo, d.catalog, d.combo),
            ("merge", &self.merge, d.merge_input(), d.merge),
            ("out", &self.out, d.merge, 1),
        ] {
            if layer.w.shape() != (output, input) || layer.b.shape() != (output, 1) {
                return Err(Error::dim(format!("{name} layer shape does not match model dimensions")));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.norm_sq()).sum::<f64>().sqrt()
    }
}

/// Cached activations of both LSTM directions over one history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryTrace {
    /// Forward direction, one cache per term in chronological order.
    pub fwd: Vec<CellCache>,
    /// Backward direction in processing order: `bwd[0]` consumed the last term.
    pub bwd: Vec<CellCache>,
}

impl HistoryTrace {
    pub fn len(&self) -> usize {
        self.fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fwd.is_empty()
    }

    /// `[h_fwd at the last term ; h_bwd at the first term]`
    pub fn representation(&self) -> Vec<f64> {
        let mut r = self.fwd.last().expect("non-empty history").h.clone();
        r.extend_from_slice(&self.bwd.last().expect("non-empty history").h);
        r
    }
}

/// Cached activations of the query, merge and output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    pub query: Vec<usize>,
    pub combo_pre: Vec<f64>,
    pub combo_act: Vec<f64>,
    pub merge_in: Vec<f64>,
    pub merge_pre: Vec<f64>,
    pub merge_act: Vec<f64>,
    pub logit: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub dims: Dims,
    pub history: HistoryTrace,
    pub head: HeadTrace,
}

impl ForwardTrace {
    pub fn probability(&self) -> f64 {
        self.head.probability
    }
}

fn run_direction<'a>(cell: &LstmCellParams, steps: impl Iterator<Item = &'a TermStep>) -> Result<Vec<CellCache>> {
    let h = cell.hidden_size();
    let mut caches: Vec<CellCache> = Vec::new();
    let zero = vec![0.0; h];
    for step in steps {
        let (h_prev, c_prev) = match caches.last() {
            Some(prev) => (prev.h.as_slice(), prev.c.as_slice()),
            None => (zero.as_slice(), zero.as_slice()),
        };
        let cache = lstm_cell_forward(cell, CellInput::OneHot(step.active()), h_prev, c_prev)?;
        caches.push(cache);
    }
    Ok(caches)
}

/// Runs both LSTM directions over a history.
pub fn encode_history(params: &ModelParams, history: &[TermStep]) -> Result<HistoryTrace> {
    if history.is_empty() {
        return Err(Error::invalid("history must contain at least one term"));
    }
    if let Some(t) = history.iter().find(|t| t.dim() != params.dims.term_size()) {
        return Err(Error::dim(format!(
            "term of size {} does not match model term size {}",
            t.dim(),
            params.dims.term_size()
        )));
    }
    Ok(HistoryTrace {
        fwd: run_direction(&params.fwd, history.iter())?,
        bwd: run_direction(&params.bwd, history.iter().rev())?,
    })
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Maps σ's saturated endpoints back inside the open interval.
fn open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Query, merge and output layers for a precomputed history representation.
pub fn head_forward(params: &ModelParams, representation: &[f64], query: &QueryCombo) -> Result<HeadTrace> {
    let d = params.dims;
    if representation.len() != 2 * d.hidden {
        return Err(Error::dim("history representation does not match hidden size"));
    }
    if query.dim() != d.catalog {
        return Err(Error::dim(format!(
            "query over {} courses does not match catalog size {}",
            query.dim(),
            d.catalog
        )));
    }
    let mut combo_pre = params.combo.b.data().to_vec();
    params.combo.w.matvec_onehot_acc(query.courses(), &mut combo_pre);
    let combo_act = relu(&combo_pre);

    let mut merge_in = representation.to_vec();
    merge_in.extend_from_slice(&combo_act);
    let mut merge_pre = params.merge.b.data().to_vec();
    params.merge.w.matvec_acc(&merge_in, &mut merge_pre);
    let merge_act = relu(&merge_pre);

    let mut logit = [params.out.b.data()[0]];
    params.out.w.matvec_acc(&merge_act, &mut logit);
    let logit = logit[0];
    if !logit.is_finite() {
        return Err(Error::NonFinite("output logit".into()));
    }
    Ok(HeadTrace {
        query: query.courses().to_vec(),
        combo_pre,
        combo_act,
        merge_in,
        merge_pre,
        merge_act,
        logit,
        probability: open_unit(sigmoid(logit)),
    })
}

/// Success probability for one (history, query) pair, with the full trace for backprop.
pub fn bidi_forward(params: &ModelParams, history: &[TermStep], query: &QueryCombo) -> Result<(f64, ForwardTrace)> {
    let history = encode_history(params, history)?;
    let head = head_forward(params, &history.representation(), query)?;
    Ok((
        head.probability,
        ForwardTrace {
            dims: params.dims,
            history,
            head,
        },
    ))
}

pub fn predict(params: &ModelParams, history: &[TermStep], query: &QueryCombo) -> Result<f64> {
    bidi_forward(params, history, query).map(|(p, _)| p)
}

/// Binary cross-entropy with `p` clamped to `[ε, 1-ε]`, `ε = 1e-12`.
pub fn bce_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// d(bce ∘ σ)/d(logit). Zero where the clamp is active.
fn logit_gradient(p: f64, label: bool) -> f64 {
    if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&p) {
        return 0.0;
    }
    p - if label { 1.0 } else { 0.0 }
}

fn check_trace(params: &ModelParams, trace: &ForwardTrace) -> Result<()> {
    let d = params.dims;
    let h = &trace.history;
    let consistent = trace.dims == d
        && !h.is_empty()
        && h.fwd.len() == h.bwd.len()
        && h.fwd.iter().chain(&h.bwd).all(|c| c.h.len() == d.hidden)
        && trace.head.merge_in.len() == d.merge_input()
        && trace.head.merge_act.len() == d.merge
        && trace.head.combo_act.len() == d.combo;
    if consistent {
        Ok(())
    } else {
        Err(Error::dim("forward trace does not match model parameters"))
    }
}

fn bptt(cell: &LstmCellParams, caches: &[CellCache], dh_final: Vec<f64>, grads: &mut LstmCellParams) {
    let mut dh = dh_final;
    let mut dc = vec![0.0; cell.hidden_size()];
    for cache in caches.iter().rev() {
        let (dh_prev, dc_prev) = lstm_cell_backward(cell, cache, &dh, &dc, grads);
        dh = dh_prev;
        dc = dc_prev;
    }
}

/// Accumulates the gradient of `bce_loss(bidi_forward(...), label)` into `grads`.
pub fn backward_into(params: &ModelParams, trace: &ForwardTrace, label: bool, grads: &mut ModelParams) -> Result<()> {
    check_trace(params, trace)?;
    if grads.dims != params.dims {
        return Err(Error::dim("gradient accumulator does not match model parameters"));
    }
    let d = params.dims;
    let head = &trace.head;

    let dlogit = logit_gradient(head.probability, label);
    grads.out.w.add_outer(&[dlogit], &head.merge_act);
    grads.out.b.data_mut()[0] += dlogit;

    let dmerge_pre: Vec<f64> = params.out.w.data()
        .iter()
        .zip(&head.merge_pre)
        .map(|(w, &z)| if z > 0.0 { dlogit * w } else { 0.0 })
        .collect();
    grads.merge.w.add_outer(&dmerge_pre, &head.merge_in);
    grads.merge.b.add_to_column(&dmerge_pre);
    let mut dmerge_in = vec![0.0; d.merge_input()];
    params.merge.w.matvec_t_acc(&dmerge_pre, &mut dmerge_in);

    let dcombo_pre: Vec<f64> = dmerge_in[2 * d.hidden..]
        .iter()
        .zip(&head.combo_pre)
        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
        .collect();
    grads.combo.w.add_outer_onehot(&dcombo_pre, &head.query);
    grads.combo.b.add_to_column(&dcombo_pre);

    let dh_fwd = dmerge_in[..d.hidden].to_vec();
    let dh_bwd = dmerge_in[d.hidden..2 * d.hidden].to_vec();
    bptt(&params.fwd, &trace.history.fwd, dh_fwd, &mut grads.fwd);
    bptt(&params.bwd, &trace.history.bwd, dh_bwd, &mut grads.bwd);
    Ok(())
}

/// Gradient of the loss for one example, congruent to `params`.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, label: bool) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    backward_into(params, trace, label, &mut grads)?;
    Ok(grads)
}
