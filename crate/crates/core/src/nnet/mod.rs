//! Dense f64 layers with hand-written reverse-mode gradients.
//!
//! Every layer is a plain struct of `ndarray` arrays. Parameters are
//! reached through [`Module`], a named visitor, which is enough for
//! snapshots, checkpoints, flattening for the optimizer and gradient checks.
//! Gradient accumulators are simply zeroed clones of the layer they belong to.

mod batchnorm;
mod blstm;
mod checkpoint;
mod gradcheck;
mod linear;
mod lstm;
mod optim;

pub use batchnorm::{BatchNorm, BatchNormTrace};
pub use blstm::{BlstmBlock, BlstmForward, BlstmStack, BlstmStackConfig, BlstmTrace, Mode, Routing};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, Stage, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, probe_indices, GradReport};
pub use linear::Linear;
pub use lstm::{Lstm, LstmState, LstmTrace};
pub use optim::{Sgd, SgdConfig, StepReport};

use ndarray::{Array1, Array2, ArrayD, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, IxDyn};
use rand::Rng;

use crate::error::{Error, Result};

/// Shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite tensor value at {i}")));
        }
        Ok(Self { shape, values })
    }

    pub fn from_view(v: ArrayViewD<'_, f64>) -> Self {
        Self {
            shape: v.shape().to_vec(),
            values: v.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.values.clone()).expect("consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

/// Named access to every array a layer owns.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>));
    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>),
    );
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Named tensors taken from a module.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    pub tensors: Vec<(String, Tensor)>,
}

impl ParameterSet {
    pub fn of(m: &(impl Module + ?Sized)) -> Self {
        let mut tensors = Vec::new();
        m.visit("", &mut |name, _, v| tensors.push((name.to_string(), Tensor::from_view(v))));
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    /// Copies every tensor the module expects; names and shapes must match.
    pub fn restore_into(&self, m: &mut (impl Module + ?Sized)) -> Result<()> {
        self.restore_filtered(m, |_| true)
    }

    /// Like [`restore_into`](Self::restore_into) but only for module tensors
    /// whose name passes `keep`.
    pub fn restore_filtered(
        &self,
        m: &mut (impl Module + ?Sized),
        keep: impl Fn(&str) -> bool,
    ) -> Result<()> {
        let mut err = None;
        m.visit_mut("", &mut |name, _, mut v| {
            if err.is_some() || !keep(name) {
                return;
            }
            match self.get(name) {
                None => err = Some(Error::Parameter(format!("missing tensor `{name}`"))),
                Some(t) if t.shape != v.shape() => {
                    err = Some(Error::Parameter(format!(
                        "tensor `{name}` has shape {:?}, expected {:?}",
                        t.shape,
                        v.shape()
                    )))
                }
                Some(t) => v.iter_mut().zip(&t.values).for_each(|(d, s)| *d = *s),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

pub fn num_trainable(m: &(impl Module + ?Sized)) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, k, v| {
        if k == ParamKind::Trainable {
            n += v.len()
        }
    });
    n
}

/// Trainable values in visit order.
pub fn flatten(m: &(impl Module + ?Sized)) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit("", &mut |_, k, v| {
        if k == ParamKind::Trainable {
            out.extend(v.iter())
        }
    });
    out
}

pub fn assign_flat(m: &mut (impl Module + ?Sized), values: &[f64]) {
    let mut pos = 0;
    m.visit_mut("", &mut |_, k, mut v| {
        if k == ParamKind::Trainable {
            for d in v.iter_mut() {
                *d = values[pos];
                pos += 1;
            }
        }
    });
    assert_eq!(pos, values.len(), "flat parameter length mismatch");
}

/// Clone with every array zeroed, used as a gradient accumulator.
pub fn zeros_like<M: Module + Clone>(m: &M) -> M {
    let mut z = m.clone();
    z.visit_mut("", &mut |_, _, mut v| v.fill(0.0));
    z
}

/// Adds `other`'s trainable arrays into `acc`.
pub fn accumulate<M: Module>(acc: &mut M, other: &M) {
    let flat = flatten(other);
    let mut pos = 0;
    acc.visit_mut("", &mut |_, k, mut v| {
        if k == ParamKind::Trainable {
            for d in v.iter_mut() {
                *d += flat[pos];
                pos += 1;
            }
        }
    });
}

/// Multiplies every trainable array by `factor`.
pub fn scale_trainable(m: &mut (impl Module + ?Sized), factor: f64) {
    m.visit_mut("", &mut |_, k, mut v| {
        if k == ParamKind::Trainable {
            v.mapv_inplace(|x| x * factor)
        }
    });
}

pub(crate) fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        if bound > 0.0 {
            rng.random_range(-bound..bound)
        } else {
            0.0
        }
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// First non-finite entry as (row, col).
pub(crate) fn find_non_finite(a: ArrayView2<'_, f64>) -> Option<(usize, usize)> {
    a.indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(idx, _)| idx)
}

pub(crate) fn column_sums(a: ArrayView2<'_, f64>) -> Array1<f64> {
    a.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn softmax_properties() {
        let z = ndarray::array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let p = softmax_rows(z.view());
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        let lp = log_softmax_rows(z.view());
        for (a, b) in lp.iter().zip(p.iter()) {
            if *b > 0.0 {
                assert!((a.exp() - b).abs() < 1e-12);
            }
        }
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn snapshot_restore_and_flat_round_trip() {
        let mut r = seed::rng(1, "t", 0);
        let a = Linear::new(3, 2, &mut r);
        let mut b = Linear::new(3, 2, &mut r);
        assert_ne!(flatten(&a), flatten(&b));
        ParameterSet::of(&a).restore_into(&mut b).unwrap();
        assert_eq!(flatten(&a), flatten(&b));
        let mut c = zeros_like(&a);
        assign_flat(&mut c, &flatten(&a));
        assert_eq!(ParameterSet::of(&a), ParameterSet::of(&c));
        let wrong = Linear::new(4, 2, &mut r);
        let e = ParameterSet::of(&wrong).restore_into(&mut b).unwrap_err();
        assert!(e.to_string().contains("weight"), "{e}");
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
