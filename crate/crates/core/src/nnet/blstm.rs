use ndarray::{concatenate, s, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{find_non_finite, join, BatchNorm, BatchNormTrace, Lstm, LstmState, LstmTrace, Module, ParamKind};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlstmStackConfig {
    pub num_blocks: usize,
    pub hidden_per_direction: usize,
    pub input_dim: usize,
    pub dropout_rate: f64,
    pub batch_norm: bool,
}

impl Default for BlstmStackConfig {
    fn default() -> Self {
        Self {
            num_blocks: 4,
            hidden_per_direction: 48,
            input_dim: 160,
            dropout_rate: 0.3,
            batch_norm: true,
        }
    }
}

impl BlstmStackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.hidden_per_direction == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "blocks, hidden size and input dimension must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_per_direction
    }
}

/// How a block above the first sees the block below.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Both directions read the full concatenated activations.
    Joint,
    /// Each direction reads only its own direction's activations, so the
    /// forward path never depends on later frames and vice versa.
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmBlock {
    pub fwd: Lstm,
    pub bwd: Lstm,
    pub norm: Option<BatchNorm>,
}

impl Module for BlstmBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
        if let Some(n) = &self.norm {
            n.visit(&join(prefix, "norm"), f);
        }
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>),
    ) {
        self.fwd.visit_mut(&join(prefix, "fwd"), f);
        self.bwd.visit_mut(&join(prefix, "bwd"), f);
        if let Some(n) = &mut self.norm {
            n.visit_mut(&join(prefix, "norm"), f);
        }
    }
}

pub enum Mode<'a> {
    /// Batch statistics and dropout drawn from the given generator.
    Train(&'a mut seed::Rng),
    Eval,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
    norm: Option<BatchNormTrace>,
    mask: Option<Array2<f64>>,
}

/// Recorded train-mode run, consumed by [`BlstmStack::backward`].
#[derive(Debug, Clone)]
pub struct BlstmTrace {
    blocks: Vec<BlockTrace>,
}

#[derive(Debug, Clone)]
pub struct BlstmForward {
    /// `T × 2H`.
    pub output: Array2<f64>,
    /// Final (forward, backward) states per block.
    pub final_states: Vec<(LstmState, LstmState)>,
    /// Present only in train mode.
    pub trace: Option<BlstmTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmStack {
    pub config: BlstmStackConfig,
    pub routing: Routing,
    pub blocks: Vec<BlstmBlock>,
}

impl BlstmStack {
    pub fn new(config: &BlstmStackConfig, routing: Routing, rng: &mut seed::Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_per_direction;
        let blocks = (0..config.num_blocks)
            .map(|b| {
                let input = if b == 0 { config.input_dim } else { 2 * h };
                let mut fwd = Lstm::new(input, h, rng);
                let mut bwd = Lstm::new(input, h, rng);
                if routing == Routing::Split && b > 0 {
                    fwd.w_ih.slice_mut(s![.., h..]).fill(0.0);
                    bwd.w_ih.slice_mut(s![.., ..h]).fill(0.0);
                }
                BlstmBlock {
                    fwd,
                    bwd,
                    norm: config.batch_norm.then(|| BatchNorm::new(2 * h)),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            routing,
            blocks,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden_per_direction
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: Mode<'_>) -> Result<BlstmForward> {
        self.forward_with_state(x, mode, None)
    }

    /// `init` holds one (forward, backward) state pair per block; the
    /// backward state is the one entering at the last frame.
    pub fn forward_with_state(
        &self,
        x: ArrayView2<'_, f64>,
        mut mode: Mode<'_>,
        init: Option<&[(LstmState, LstmState)]>,
    ) -> Result<BlstmForward> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Contract(format!(
                "trunk expects {} input features, got {}",
                self.config.input_dim,
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Contract("empty input sequence".into()));
        }
        if let Some(s) = init {
            if s.len() != self.blocks.len() {
                return Err(Error::Contract("one initial state pair per block".into()));
            }
        }
        let h = self.hidden();
        let train = matches!(mode, Mode::Train(_));
        let mut a = x.to_owned();
        let mut traces = Vec::new();
        let mut finals = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let (xf, xb) = if self.routing == Routing::Split && b > 0 {
                let mut xf = a.clone();
                xf.slice_mut(s![.., h..]).fill(0.0);
                let mut xb = a;
                xb.slice_mut(s![.., ..h]).fill(0.0);
                (xf, xb)
            } else {
                (a.clone(), a)
            };
            let (s_f, s_b) = match init {
                Some(s) => (Some(&s[b].0), Some(&s[b].1)),
                None => (None, None),
            };
            let (hf, last_f, tf) = block.fwd.forward(xf.view(), false, s_f)?;
            let (hb, last_b, tb) = block.bwd.forward(xb.view(), true, s_b)?;
            finals.push((last_f, last_b));
            let cat = concatenate(Axis(1), &[hf.view(), hb.view()]).expect("same length");
            let (mut out, norm_trace) = match (&block.norm, train) {
                (Some(n), true) => {
                    let (y, t) = n.forward_train(cat.view());
                    (y, Some(t))
                }
                (Some(n), false) => (n.forward_eval(cat.view()), None),
                (None, _) => (cat, None),
            };
            let mut mask = None;
            if let Mode::Train(rng) = &mut mode {
                let p = self.config.dropout_rate;
                if p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let m = Array2::from_shape_simple_fn(out.dim(), || {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            keep
                        }
                    });
                    out *= &m;
                    mask = Some(m);
                }
            }
            if let Some((t, _)) = find_non_finite(out.view()) {
                return Err(Error::Numeric(format!(
                    "non-finite activation in block {b} at frame {t}"
                )));
            }
            if train {
                traces.push(BlockTrace {
                    fwd: tf,
                    bwd: tb,
                    norm: norm_trace,
                    mask,
                });
            }
            a = out;
        }
        Ok(BlstmForward {
            output: a,
            final_states: finals,
            trace: train.then_some(BlstmTrace { blocks: traces }),
        })
    }

    /// Folds the batch statistics of a train-mode run into the running
    /// averages used in eval mode.
    pub fn update_running(&mut self, trace: &BlstmTrace) {
        for (block, t) in self.blocks.iter_mut().zip(&trace.blocks) {
            if let (Some(n), Some(nt)) = (&mut block.norm, &t.norm) {
                n.update_running(nt);
            }
        }
    }

    /// Accumulates gradients into `grads`; returns `dL/dx`.
    pub fn backward(
        &self,
        forward: &BlstmForward,
        dy: ArrayView2<'_, f64>,
        grads: &mut BlstmStack,
    ) -> Result<Array2<f64>> {
        let trace = forward
            .trace
            .as_ref()
            .ok_or_else(|| Error::Contract("backward needs a train-mode forward trace".into()))?;
        if dy.dim() != forward.output.dim() {
            return Err(Error::Contract("output gradient shape mismatch".into()));
        }
        let h = self.hidden();
        let mut d = dy.to_owned();
        for (b, (block, t)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let g = &mut grads.blocks[b];
            if let Some(m) = &t.mask {
                d *= m;
            }
            if let (Some(n), Some(nt)) = (&block.norm, &t.norm) {
                d = n.backward(nt, d.view(), g.norm.as_mut().expect("same layout"));
            }
            let dxf = block.fwd.backward(&t.fwd, d.slice(s![.., ..h]), &mut g.fwd);
            let dxb = block.bwd.backward(&t.bwd, d.slice(s![.., h..]), &mut g.bwd);
            d = if self.routing == Routing::Split && b > 0 {
                let mut out = dxf;
                out.slice_mut(s![.., h..]).assign(&dxb.slice(s![.., h..]));
                out
            } else {
                dxf + dxb
            };
        }
        Ok(d)
    }
}

impl Module for BlstmStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        for (b, block) in self.blocks.iter().enumerate() {
            block.visit(&join(prefix, &format!("block{b}")), f);
        }
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>),
    ) {
        for (b, block) in self.blocks.iter_mut().enumerate() {
            block.visit_mut(&join(prefix, &format!("block{b}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{assign_flat, flatten, grad_check, probe_indices, uniform, zeros_like};

    fn cfg(blocks: usize, hidden: usize, input: usize, dropout: f64) -> BlstmStackConfig {
        BlstmStackConfig {
            num_blocks: blocks,
            hidden_per_direction: hidden,
            input_dim: input,
            dropout_rate: dropout,
            batch_norm: true,
        }
    }

    #[test]
    fn output_shape() {
        let mut r = seed::rng(1, "b", 0);
        let st = BlstmStack::new(&cfg(4, 32, 160, 0.3), Routing::Joint, &mut r).unwrap();
        let x = uniform(7, 160, 1.0, &mut r);
        assert_eq!(st.forward(x.view(), Mode::Eval).unwrap().output.dim(), (7, 64));
        assert!(matches!(
            st.forward(uniform(7, 80, 1.0, &mut r).view(), Mode::Eval),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut r = seed::rng(1, "b", 0);
        let mut st = BlstmStack::new(&cfg(3, 4, 6, 0.0), Routing::Joint, &mut r).unwrap();
        st.visit_mut("", &mut |_, k, mut v| {
            if k == ParamKind::Trainable {
                v.fill(0.0)
            }
        });
        for b in &mut st.blocks {
            b.norm = None;
        }
        let x = uniform(5, 6, 3.0, &mut r);
        assert!(st.forward(x.view(), Mode::Eval).unwrap().output.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reversal_with_swapped_directions() {
        let mut r = seed::rng(4, "b", 0);
        let st = BlstmStack::new(&cfg(3, 3, 5, 0.0), Routing::Joint, &mut r).unwrap();
        let mut mirrored = st.clone();
        let h = 3;
        let swap_halves = |a: &ndarray::Array1<f64>| {
            concatenate(Axis(0), &[a.slice(s![h..]), a.slice(s![..h])]).unwrap()
        };
        for (b, block) in mirrored.blocks.iter_mut().enumerate() {
            std::mem::swap(&mut block.fwd, &mut block.bwd);
            if b > 0 {
                for l in [&mut block.fwd, &mut block.bwd] {
                    l.w_ih = concatenate(Axis(1), &[l.w_ih.slice(s![.., h..]), l.w_ih.slice(s![.., ..h])])
                        .unwrap();
                }
            }
            let n = block.norm.as_mut().unwrap();
            n.gamma = swap_halves(&n.gamma);
            n.running_mean = swap_halves(&(&n.running_mean + 0.1));
            n.running_var = swap_halves(&(&n.running_var * 1.3));
        }
        // mirrored norms were perturbed; apply the same perturbation to the original
        let mut st = st;
        for block in &mut st.blocks {
            let n = block.norm.as_mut().unwrap();
            n.running_mean += 0.1;
            n.running_var *= 1.3;
        }
        let x = uniform(8, 5, 1.0, &mut r);
        let y = st.forward(x.view(), Mode::Eval).unwrap().output;
        let xr = x.slice(s![..;-1, ..]).to_owned();
        let yr = mirrored.forward(xr.view(), Mode::Eval).unwrap().output;
        for t in 0..8 {
            for j in 0..2 * h {
                let jj = (j + h) % (2 * h);
                assert!((y[[t, j]] - yr[[7 - t, jj]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_through_two_blocks() {
        for (i, routing) in [Routing::Joint, Routing::Split].into_iter().enumerate() {
            for k in 0..3u64 {
                let mut r = seed::rng(6 + k, "b", i as u64);
                let st = BlstmStack::new(&cfg(2, 4, 16, 0.0), routing, &mut r).unwrap();
                let x = uniform(30, 16, 3f64.sqrt(), &mut r);
                let w = uniform(30, 8, 1.0, &mut r);
                let mut dummy = seed::rng(0, "d", 0);
                let fw = st.forward(x.view(), Mode::Train(&mut dummy)).unwrap();
                let mut g = zeros_like(&st);
                st.backward(&fw, w.view(), &mut g).unwrap();
                let theta = flatten(&st);
                let mut scratch = st.clone();
                let rep = grad_check(
                    |p| {
                        assign_flat(&mut scratch, p);
                        let mut d = seed::rng(0, "d", 0);
                        (&scratch.forward(x.view(), Mode::Train(&mut d)).unwrap().output * &w).sum()
                    },
                    &theta,
                    &flatten(&g),
                    &probe_indices(theta.len(), 200, k),
                    1e-5,
                    1e-5,
                )
                .unwrap();
                assert!(rep.passed(), "{routing:?} {rep:?}");
            }
        }
    }

    #[test]
    fn backward_needs_trace_and_zero_upstream_gives_zero() {
        let mut r = seed::rng(6, "b", 2);
        let st = BlstmStack::new(&cfg(2, 3, 4, 0.2), Routing::Joint, &mut r).unwrap();
        let x = uniform(5, 4, 1.0, &mut r);
        let ev = st.forward(x.view(), Mode::Eval).unwrap();
        let mut g = zeros_like(&st);
        assert!(matches!(
            st.backward(&ev, Array2::zeros((5, 6)).view(), &mut g),
            Err(Error::Contract(_))
        ));
        let tr = st.forward(x.view(), Mode::Train(&mut r)).unwrap();
        st.backward(&tr, Array2::zeros((5, 6)).view(), &mut g).unwrap();
        assert!(flatten(&g).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut r = seed::rng(9, "b", 0);
        let mut c = cfg(1, 4, 3, 0.3);
        c.batch_norm = false;
        let st = BlstmStack::new(&c, Routing::Joint, &mut r).unwrap();
        let x = uniform(2, 3, 1.0, &mut r);
        let reference = st.forward(x.view(), Mode::Eval).unwrap().output[[1, 2]];
        let n = 10_000;
        let mean = (0..n)
            .map(|_| st.forward(x.view(), Mode::Train(&mut r)).unwrap().output[[1, 2]])
            .sum::<f64>()
            / n as f64;
        assert!((mean - reference).abs() <= 0.02 * reference.abs(), "{mean} vs {reference}");
    }

    #[test]
    fn split_routing_is_causal_per_direction() {
        let mut r = seed::rng(3, "b", 0);
        let st = BlstmStack::new(&cfg(3, 3, 4, 0.0), Routing::Split, &mut r).unwrap();
        let x = uniform(9, 4, 1.0, &mut r);
        let y = st.forward(x.view(), Mode::Eval).unwrap().output;
        let mut x2 = x.clone();
        x2.slice_mut(s![6.., ..]).mapv_inplace(|v| v + 5.0);
        let y2 = st.forward(x2.view(), Mode::Eval).unwrap().output;
        assert_eq!(y.slice(s![..6, ..3]), y2.slice(s![..6, ..3]));
        assert_ne!(y.slice(s![..6, 3..]), y2.slice(s![..6, 3..]));
    }
}
