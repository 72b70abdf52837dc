use serde::{Deserialize, Serialize};

use super::{flatten, Module, ParamKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            clip_norm: 5.0,
        }
    }
}

/// Momentum SGD over the trainable parameters of one module.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl Sgd {
    pub fn new(config: SgdConfig, num_params: usize) -> Self {
        Self {
            config,
            velocity: vec![0.0; num_params],
        }
    }

    /// `v ← μv + g`, `p ← p − lr·v` after scaling `g` to the clip norm.
    /// A non-finite gradient leaves everything untouched.
    pub fn step<M: Module + ?Sized>(&mut self, params: &mut M, grads: &M) -> Result<StepReport> {
        let g = flatten(grads);
        if g.len() != self.velocity.len() {
            return Err(Error::Contract(format!(
                "optimizer holds {} buffers, gradient has {}",
                self.velocity.len(),
                g.len()
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at coordinate {i}; step skipped"
            )));
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let clip = self.config.clip_norm;
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        for (v, gi) in self.velocity.iter_mut().zip(&g) {
            *v = self.config.momentum * *v + scale * gi;
        }
        let lr = self.config.learning_rate;
        let mut pos = 0;
        let vel = &self.velocity;
        params.visit_mut("", &mut |_, k, mut view| {
            if k == ParamKind::Trainable {
                for p in view.iter_mut() {
                    *p -= lr * vel[pos];
                    pos += 1;
                }
            }
        });
        Ok(StepReport {
            grad_norm: norm,
            clipped: scale < 1.0,
        })
    }
}
