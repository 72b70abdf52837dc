use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};

use super::{column_sums, join, Module, ParamKind};

/// Per-feature normalisation over the time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormTrace {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalises with the statistics of `x` itself.
    pub fn forward_train(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, BatchNormTrace) {
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centred = &x - &mean;
        let var = centred.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = centred * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (
            y,
            BatchNormTrace {
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + self.eps).sqrt());
        (&x - &self.running_mean) * &scale + &self.beta
    }

    pub fn update_running(&mut self, trace: &BatchNormTrace) {
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &trace.mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &trace.var * m;
    }

    pub fn backward(
        &self,
        trace: &BatchNormTrace,
        dy: ArrayView2<'_, f64>,
        grads: &mut BatchNorm,
    ) -> Array2<f64> {
        let n = dy.nrows() as f64;
        grads.gamma += &column_sums((&dy * &trace.xhat).view());
        grads.beta += &column_sums(dy);
        let dxhat = &dy * &self.gamma;
        let sum_d = column_sums(dxhat.view());
        let sum_dx = column_sums((&dxhat * &trace.xhat).view());
        let inner = dxhat * n - &sum_d - &trace.xhat * &sum_dx;
        inner * &(&trace.inv_std / n)
    }
}

impl Module for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        f(&join(prefix, "gamma"), ParamKind::Trainable, self.gamma.view().into_dyn());
        f(&join(prefix, "beta"), ParamKind::Trainable, self.beta.view().into_dyn());
        f(&join(prefix, "running_mean"), ParamKind::Buffer, self.running_mean.view().into_dyn());
        f(&join(prefix, "running_var"), ParamKind::Buffer, self.running_var.view().into_dyn());
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>),
    ) {
        f(&join(prefix, "gamma"), ParamKind::Trainable, self.gamma.view_mut().into_dyn());
        f(&join(prefix, "beta"), ParamKind::Trainable, self.beta.view_mut().into_dyn());
        f(
            &join(prefix, "running_mean"),
            ParamKind::Buffer,
            self.running_mean.view_mut().into_dyn(),
        );
        f(
            &join(prefix, "running_var"),
            ParamKind::Buffer,
            self.running_var.view_mut().into_dyn(),
        );
    }
}
