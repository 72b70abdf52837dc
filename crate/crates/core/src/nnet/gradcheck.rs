use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::seed;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_relative_error: f64,
    pub probes: usize,
    /// (coordinate, analytic, numeric) for probes above tolerance.
    pub failures: Vec<(usize, f64, f64)>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `count` distinct coordinates (all of them if fewer), seeded.
pub fn probe_indices(len: usize, count: usize, probe_seed: u64) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    let mut r = seed::rng(probe_seed, "probes", 0);
    let mut v = sample(&mut r, len, count).into_vec();
    v.sort_unstable();
    v
}

/// Compares `analytic` against central differences of `loss` at `x`.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    probes: &[usize],
    step: f64,
    tolerance: f64,
) -> Result<GradReport> {
    if analytic.len() != x.len() {
        return Err(Error::Contract("gradient and point differ in length".into()));
    }
    let a = loss(x);
    let b = loss(x);
    if a.to_bits() != b.to_bits() {
        return Err(Error::Contract(format!(
            "loss is not deterministic ({a} then {b})"
        )));
    }
    let mut point = x.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut failures = Vec::new();
    for &i in probes {
        let orig = point[i];
        point[i] = orig + step;
        let up = loss(&point);
        point[i] = orig - step;
        let down = loss(&point);
        point[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let an = analytic[i];
        let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
        if !(rel <= tolerance) {
            failures.push((i, an, numeric));
        }
    }
    Ok(GradReport {
        max_relative_error: max_rel,
        probes: probes.len(),
        failures,
    })
}
