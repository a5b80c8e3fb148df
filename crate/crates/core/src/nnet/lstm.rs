//! Single LSTM cell with a forget gate and no peepholes:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)      f = σ(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g)   o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Gate order used for every per-gate array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output];

    /// Suffix used in tensor names (`W_i`, `U_f`, `b_g`, ...).
    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Candidate => "g",
            Gate::Output => "o",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    /// Input weights per gate, `hidden x input`.
    pub w: [Matrix; 4],
    /// Recurrent weights per gate, `hidden x hidden`.
    pub u: [Matrix; 4],
    /// Biases per gate, `hidden x 1`.
    pub b: [Matrix; 4],
}

impl LstmCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmCellParams {
            w: std::array::from_fn(|_| Matrix::zeros(hidden_size, input_size)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden_size, hidden_size)),
            b: std::array::from_fn(|_| Matrix::zeros(hidden_size, 1)),
        }
    }

    /// Glorot-uniform weights, zero biases except the forget gate at 1.
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        for g in 0..4 {
            glorot_fill(&mut p.w[g], rng);
            glorot_fill(&mut p.u[g], rng);
        }
        p.b[Gate::Forget as usize].fill(1.0);
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.u[0].rows()
    }

    pub fn input_size(&self) -> usize {
        self.w[0].cols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (h, d) = (self.hidden_size(), self.input_size());
        for g in 0..4 {
            if self.w[g].shape() != (h, d) || self.u[g].shape() != (h, h) || self.b[g].shape() != (h, 1) {
                return Err(Error::dim(format!(
                    "LSTM gate {} tensors inconsistent with hidden {h}, input {d}",
                    Gate::ALL[g].suffix()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn glorot_fill<R: Rng>(m: &mut Matrix, rng: &mut R) {
    let limit = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
    for v in m.data_mut() {
        *v = rng.gen_range(-limit..=limit);
    }
}

/// One step's input: a dense vector, or the positions of ones in a 0/1 vector.
#[derive(Debug, Clone, Copy)]
pub enum CellInput<'a> {
    Dense(&'a [f64]),
    OneHot(&'a [usize]),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum OwnedInput {
    Dense(Vec<f64>),
    OneHot(Vec<usize>),
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCache {
    pub(crate) input: OwnedInput,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Gate pre-activations, indexed by [`Gate`].
    pub pre: [Vec<f64>; 4],
    /// Gate activations (σ for i, f, o; tanh for g).
    pub act: [Vec<f64>; 4],
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_cell_forward(
    params: &LstmCellParams,
    x: CellInput<'_>,
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<CellCache> {
    let (hs, ds) = (params.hidden_size(), params.input_size());
    if h_prev.len() != hs || c_prev.len() != hs {
        return Err(Error::dim(format!(
            "state length {}/{} does not match hidden size {hs}",
            h_prev.len(),
            c_prev.len()
        )));
    }
    let input = match x {
        CellInput::Dense(v) if v.len() != ds => {
            return Err(Error::dim(format!("input length {} does not match {ds}", v.len())))
        }
        CellInput::Dense(v) => OwnedInput::Dense(v.to_vec()),
        CellInput::OneHot(a) => {
            if let Some(&j) = a.iter().find(|&&j| j >= ds) {
                return Err(Error::dim(format!("one-hot position {j} outside input size {ds}")));
            }
            OwnedInput::OneHot(a.to_vec())
        }
    };

    let pre: [Vec<f64>; 4] = std::array::from_fn(|g| {
        let mut z = params.b[g].data().to_vec();
        match &input {
            OwnedInput::Dense(v) => params.w[g].matvec_acc(v, &mut z),
            OwnedInput::OneHot(a) => params.w[g].matvec_onehot_acc(a, &mut z),
        }
        params.u[g].matvec_acc(h_prev, &mut z);
        z
    });
    let act: [Vec<f64>; 4] = std::array::from_fn(|g| {
        if g == Gate::Candidate as usize {
            pre[g].iter().map(|z| z.tanh()).collect()
        } else {
            pre[g].iter().map(|&z| sigmoid(z)).collect()
        }
    });
    let [i, f, g, o] = &act;
    let c: Vec<f64> = (0..hs).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hs).map(|k| o[k] * tanh_c[k]).collect();
    if h.iter().chain(&c).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LSTM cell output".into()));
    }

    Ok(CellCache {
        input,
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        pre,
        act,
        c,
        tanh_c,
        h,
    })
}

/// Backpropagates one step. `dh` and `dc` are the loss gradients flowing into
/// this step's `h` and `c`; parameter gradients accumulate into `grads` and the
/// gradients for `(h_prev, c_prev)` are returned.
pub fn lstm_cell_backward(
    params: &LstmCellParams,
    cache: &CellCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmCellParams,
) -> (Vec<f64>, Vec<f64>) {
    let hs = params.hidden_size();
    let [i, f, g, o] = &cache.act;
    let mut dpre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hs]);
    let mut dc_prev = vec![0.0; hs];
    for k in 0..hs {
        let d_o = dh[k] * cache.tanh_c[k];
        let dc_total = dc[k] + dh[k] * o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
        let d_i = dc_total * g[k];
        let d_g = dc_total * i[k];
        let d_f = dc_total * cache.c_prev[k];
        dc_prev[k] = dc_total * f[k];
        dpre[Gate::Input as usize][k] = d_i * i[k] * (1.0 - i[k]);
        dpre[Gate::Forget as usize][k] = d_f * f[k] * (1.0 - f[k]);
        dpre[Gate::Candidate as usize][k] = d_g * (1.0 - g[k] * g[k]);
        dpre[Gate::Output as usize][k] = d_o * o[k] * (1.0 - o[k]);
    }

    let mut dh_prev = vec![0.0; hs];
    for (gate, dz) in dpre.iter().enumerate() {
        match &cache.input {
            OwnedInput::Dense(v) => grads.w[gate].add_outer(dz, v),
            OwnedInput::OneHot(a) => grads.w[gate].add_outer_onehot(dz, a),
        }
        grads.u[gate].add_outer(dz, &cache.h_prev);
        grads.b[gate].add_to_column(dz);
        params.u[gate].matvec_t_acc(dz, &mut dh_prev);
    }
    (dh_prev, dc_prev)
}
