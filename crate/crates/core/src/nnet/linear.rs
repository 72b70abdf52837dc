use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::{column_sums, join, uniform, Module, ParamKind};
use crate::error::{Error, Result};

/// Affine map `y = x Wᵀ + b` applied to each row of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: uniform(output, input, 1.0 / (input as f64).sqrt(), rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Contract(format!(
                "linear layer expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Accumulates parameter gradients into `grads`; returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
        grads: &mut Linear,
    ) -> Array2<f64> {
        grads.weight += &dy.t().dot(&x);
        grads.bias += &column_sums(dy);
        dy.dot(&self.weight)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        f(&join(prefix, "weight"), ParamKind::Trainable, self.weight.view().into_dyn());
        f(&join(prefix, "bias"), ParamKind::Trainable, self.bias.view().into_dyn());
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>),
    ) {
        f(&join(prefix, "weight"), ParamKind::Trainable, self.weight.view_mut().into_dyn());
        f(&join(prefix, "bias"), ParamKind::Trainable, self.bias.view_mut().into_dyn());
    }
}
