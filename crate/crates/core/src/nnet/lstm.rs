use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::{column_sums, join, sigmoid, uniform, Module, ParamKind};
use crate::error::{Error, Result};

/// One LSTM direction. Gate blocks are stacked in the order i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `4H × in`.
    pub w_ih: Array2<f64>,
    /// `4H × H`.
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

/// Everything the backward pass needs, indexed by time (not step order).
#[derive(Debug, Clone)]
pub struct LstmTrace {
    x: Array2<f64>,
    /// Activated gates, `T × 4H`.
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
    init: LstmState,
    reverse: bool,
}

impl Lstm {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Array1::zeros(4 * hidden);
        bias.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self {
            w_ih: uniform(4 * hidden, input, 1.0 / (input as f64).sqrt(), rng),
            w_hh: uniform(4 * hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.ncols()
    }

    /// Runs over `x` (`T × in`), right to left when `reverse`.
    pub fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        reverse: bool,
        init: Option<&LstmState>,
    ) -> Result<(Array2<f64>, LstmState, LstmTrace)> {
        let hd = self.hidden();
        if x.ncols() != self.input_dim() {
            return Err(Error::Contract(format!(
                "lstm expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let init = init.cloned().unwrap_or_else(|| LstmState::zeros(hd));
        if init.h.len() != hd || init.c.len() != hd {
            return Err(Error::Contract("initial state has wrong size".into()));
        }
        let t_len = x.nrows();
        let pre = x.dot(&self.w_ih.t()) + &self.bias;
        let mut gates = Array2::zeros((t_len, 4 * hd));
        let mut c = Array2::zeros((t_len, hd));
        let mut tanh_c = Array2::zeros((t_len, hd));
        let mut h = Array2::zeros((t_len, hd));
        let mut h_prev = init.h.clone();
        let mut c_prev = init.c.clone();
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let z = &pre.row(t) + &self.w_hh.dot(&h_prev);
            let mut g = gates.row_mut(t);
            for k in 0..hd {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[hd + k]);
                let gg = z[2 * hd + k].tanh();
                let o = sigmoid(z[3 * hd + k]);
                let cc = f * c_prev[k] + i * gg;
                let tc = cc.tanh();
                g[k] = i;
                g[hd + k] = f;
                g[2 * hd + k] = gg;
                g[3 * hd + k] = o;
                c[[t, k]] = cc;
                tanh_c[[t, k]] = tc;
                h[[t, k]] = o * tc;
            }
            h_prev = h.row(t).to_owned();
            c_prev = c.row(t).to_owned();
        }
        let last = LstmState { h: h_prev, c: c_prev };
        let trace = LstmTrace {
            x: x.to_owned(),
            gates,
            c,
            tanh_c,
            h: h.clone(),
            init,
            reverse,
        };
        Ok((h, last, trace))
    }

    /// Backpropagates `dh` (`T × H`, gradient w.r.t. every output) through
    /// the recorded run. Accumulates into `grads`; returns `dL/dx`.
    pub fn backward(&self, trace: &LstmTrace, dh: ArrayView2<'_, f64>, grads: &mut Lstm) -> Array2<f64> {
        let hd = self.hidden();
        let t_len = trace.x.nrows();
        let mut dz = Array2::zeros((t_len, 4 * hd));
        let mut h_prev_mat = Array2::zeros((t_len, hd));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);
        for step in (0..t_len).rev() {
            let t = if trace.reverse { t_len - 1 - step } else { step };
            let prev = if step == 0 {
                None
            } else if trace.reverse {
                Some(t + 1)
            } else {
                Some(t - 1)
            };
            let (h_prev, c_prev) = match prev {
                Some(p) => (trace.h.row(p), trace.c.row(p)),
                None => (trace.init.h.view(), trace.init.c.view()),
            };
            h_prev_mat.row_mut(t).assign(&h_prev);
            let g = trace.gates.row(t);
            let mut dzt = dz.row_mut(t);
            for k in 0..hd {
                let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
                let tc = trace.tanh_c[[t, k]];
                let dht = dh[[t, k]] + dh_next[k];
                let d_o = dht * tc;
                let dc = dht * o * (1.0 - tc * tc) + dc_next[k];
                dzt[k] = dc * gg * i * (1.0 - i);
                dzt[hd + k] = dc * c_prev[k] * f * (1.0 - f);
                dzt[2 * hd + k] = dc * i * (1.0 - gg * gg);
                dzt[3 * hd + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next = self.w_hh.t().dot(&dzt);
        }
        grads.w_hh += &dz.t().dot(&h_prev_mat);
        grads.w_ih += &dz.t().dot(&trace.x);
        grads.bias += &column_sums(dz.view());
        dz.dot(&self.w_ih)
    }
}

impl Module for Lstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        f(&join(prefix, "w_ih"), ParamKind::Trainable, self.w_ih.view().into_dyn());
        f(&join(prefix, "w_hh"), ParamKind::Trainable, self.w_hh.view().into_dyn());
        f(&join(prefix, "bias"), ParamKind::Trainable, self.bias.view().into_dyn());
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>),
    ) {
        f(&join(prefix, "w_ih"), ParamKind::Trainable, self.w_ih.view_mut().into_dyn());
        f(&join(prefix, "w_hh"), ParamKind::Trainable, self.w_hh.view_mut().into_dyn());
        f(&join(prefix, "bias"), ParamKind::Trainable, self.bias.view_mut().into_dyn());
    }
}
