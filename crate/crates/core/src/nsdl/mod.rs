//! Two-head non-speech/speech factorisation of the state posterior and its
//! losses.
//!
//! Head 1 is a softmax over the non-speech states plus one extra "speech"
//! column (always the last column); head 2 is a softmax over speech states.
//! Speech states get `P(s) = p1(speech) · p2(s)`.

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::{StateId, StateInventory};
use crate::nnet::{log_softmax_rows, softmax_rows, Linear, Module, ParamKind};
use crate::seed;

/// Probability floor inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NsdlLossConfig {
    pub lambda: f64,
    pub class_weight_nonspeech: f64,
    pub class_weight_speech: f64,
}

impl Default for NsdlLossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            class_weight_nonspeech: 0.9,
            class_weight_speech: 1.0,
        }
    }
}

impl NsdlLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.class_weight_nonspeech > 0.0 && self.class_weight_speech > 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        Ok(())
    }

    fn weight(&self, speech: bool) -> f64 {
        if speech {
            self.class_weight_speech
        } else {
            self.class_weight_nonspeech
        }
    }
}

/// Output layers reading the shared trunk activations.
#[derive(Debug, Clone, PartialEq)]
pub struct NsdlHeads {
    /// hidden → |S1| + 1.
    pub head1: Linear,
    /// hidden → |S2|.
    pub head2: Linear,
}

impl NsdlHeads {
    pub fn new(hidden: usize, inventory: &StateInventory, rng: &mut seed::Rng) -> Self {
        Self {
            head1: Linear::new(hidden, inventory.nonspeech().len() + 1, rng),
            head2: Linear::new(hidden, inventory.speech().len(), rng),
        }
    }

    pub fn logits(&self, hidden: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((self.head1.forward(hidden)?, self.head2.forward(hidden)?))
    }

    pub fn forward(&self, hidden: ArrayView2<'_, f64>) -> Result<NsdlOutputs> {
        let (z1, z2) = self.logits(hidden)?;
        Ok(NsdlOutputs::from_logits(z1.view(), z2.view()))
    }
}

impl Module for NsdlHeads {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ndarray::ArrayViewD<'_, f64>)) {
        self.head1.visit(&crate::nnet::join(prefix, "head1"), f);
        self.head2.visit(&crate::nnet::join(prefix, "head2"), f);
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ndarray::ArrayViewMutD<'_, f64>),
    ) {
        self.head1.visit_mut(&crate::nnet::join(prefix, "head1"), f);
        self.head2.visit_mut(&crate::nnet::join(prefix, "head2"), f);
    }
}

/// Per-frame head distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct NsdlOutputs {
    /// `T × (|S1| + 1)`, speech column last.
    pub p1: Array2<f64>,
    /// `T × |S2|`.
    pub p2: Array2<f64>,
}

impl NsdlOutputs {
    pub fn from_logits(z1: ArrayView2<'_, f64>, z2: ArrayView2<'_, f64>) -> Self {
        Self {
            p1: softmax_rows(z1),
            p2: softmax_rows(z2),
        }
    }

    pub fn frames(&self) -> usize {
        self.p1.nrows()
    }

    pub fn speech_column(&self) -> usize {
        self.p1.ncols() - 1
    }

    /// `p1(speech)` per frame.
    pub fn speech_prob(&self) -> Array1<f64> {
        self.p1.column(self.speech_column()).to_owned()
    }

    fn check(&self, inventory: &StateInventory) -> Result<()> {
        if self.p1.ncols() != inventory.nonspeech().len() + 1
            || self.p2.ncols() != inventory.speech().len()
            || self.p1.nrows() != self.p2.nrows()
        {
            return Err(Error::Contract("head outputs do not match the state inventory".into()));
        }
        Ok(())
    }
}

/// `b_t = 1` iff the frame's state is a speech state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeechMask {
    pub b: Vec<bool>,
}

impl SpeechMask {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }
}

pub fn build_speech_mask(alignment: &[StateId], inventory: &StateInventory) -> Result<SpeechMask> {
    let b = alignment
        .iter()
        .map(|&s| {
            inventory.check(s)?;
            Ok(inventory.is_speech(s))
        })
        .collect::<Result<_>>()?;
    Ok(SpeechMask { b })
}

fn ln(p: f64) -> (f64, bool) {
    if p < LOG_FLOOR {
        (LOG_FLOOR.ln(), true)
    } else {
        (p.ln(), false)
    }
}

/// `Σ_{s∈S1} p1(s)` per frame.
pub fn nonspeech_prob(outputs: &NsdlOutputs) -> Array1<f64> {
    let sp = outputs.speech_column();
    outputs
        .p1
        .slice(s![.., ..sp])
        .rows()
        .into_iter()
        .map(|r| r.sum())
        .collect()
}

/// Binary speech/non-speech cross entropy, summed over frames.
pub fn loss_l1(outputs: &NsdlOutputs, mask: &SpeechMask) -> Result<f64> {
    Ok(l1_terms(outputs, mask)?.0)
}

fn l1_terms(outputs: &NsdlOutputs, mask: &SpeechMask) -> Result<(f64, usize)> {
    if mask.len() != outputs.frames() {
        return Err(Error::Contract(format!(
            "mask has {} frames, outputs {}",
            mask.len(),
            outputs.frames()
        )));
    }
    let ns = nonspeech_prob(outputs);
    let sp = outputs.speech_prob();
    let mut sum = 0.0;
    let mut floored = 0;
    for (t, &b) in mask.b.iter().enumerate() {
        let (l, f) = ln(if b { sp[t] } else { ns[t] });
        sum -= l;
        floored += f as usize;
    }
    Ok((sum, floored))
}

/// Full posterior over all states, columns indexed by state id.
pub fn combine_distribution(outputs: &NsdlOutputs, inventory: &StateInventory) -> Result<Array2<f64>> {
    outputs.check(inventory)?;
    let sp = outputs.speech_column();
    let mut out = Array2::zeros((outputs.frames(), inventory.len()));
    for (j, &s) in inventory.nonspeech().iter().enumerate() {
        out.column_mut(s).assign(&outputs.p1.column(j));
    }
    for (j, &s) in inventory.speech().iter().enumerate() {
        out.column_mut(s).assign(&(&outputs.p2.column(j) * &outputs.p1.column(sp)));
    }
    Ok(out)
}

/// Log of [`combine_distribution`] computed from logits without underflow.
pub fn combine_log_distribution(
    z1: ArrayView2<'_, f64>,
    z2: ArrayView2<'_, f64>,
    inventory: &StateInventory,
) -> Array2<f64> {
    let l1 = log_softmax_rows(z1);
    let l2 = log_softmax_rows(z2);
    let sp = l1.ncols() - 1;
    let mut out = Array2::zeros((l1.nrows(), inventory.len()));
    for (j, &s) in inventory.nonspeech().iter().enumerate() {
        out.column_mut(s).assign(&l1.column(j));
    }
    for (j, &s) in inventory.speech().iter().enumerate() {
        out.column_mut(s).assign(&(&l2.column(j) + &l1.column(sp)));
    }
    out
}

/// Class-weighted state cross entropy over the combined posterior.
pub fn loss_l2(
    outputs: &NsdlOutputs,
    alignment: &[StateId],
    inventory: &StateInventory,
    config: &NsdlLossConfig,
) -> Result<f64> {
    Ok(l2_terms(outputs, alignment, inventory, config)?.0)
}

fn l2_terms(
    outputs: &NsdlOutputs,
    alignment: &[StateId],
    inventory: &StateInventory,
    config: &NsdlLossConfig,
) -> Result<(f64, usize)> {
    outputs.check(inventory)?;
    if alignment.len() != outputs.frames() {
        return Err(Error::Contract(format!(
            "alignment has {} frames, outputs {}",
            alignment.len(),
            outputs.frames()
        )));
    }
    let sp = outputs.speech_column();
    let mut sum = 0.0;
    let mut floored = 0;
    for (t, &y) in alignment.iter().enumerate() {
        inventory.check(y)?;
        let slot = inventory.slot(y);
        let speech = inventory.is_speech(y);
        let p = if speech {
            outputs.p1[[t, sp]] * outputs.p2[[t, slot]]
        } else {
            outputs.p1[[t, slot]]
        };
        let (l, f) = ln(p);
        sum -= config.weight(speech) * l;
        floored += f as usize;
    }
    Ok((sum, floored))
}

/// Sums over frames plus the frame count; means divide by `frames`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NsdlBreakdown {
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
    pub frames: usize,
    /// Log terms that hit the probability floor.
    pub floored: usize,
}

impl NsdlBreakdown {
    pub fn mean_total(&self) -> f64 {
        self.total / self.frames.max(1) as f64
    }

    pub fn add(&mut self, o: &NsdlBreakdown) {
        self.total += o.total;
        self.l1 += o.l1;
        self.l2 += o.l2;
        self.frames += o.frames;
        self.floored += o.floored;
    }
}

/// `L1 + λ·L2`.
pub fn loss_nsdl(
    outputs: &NsdlOutputs,
    alignment: &[StateId],
    mask: &SpeechMask,
    inventory: &StateInventory,
    config: &NsdlLossConfig,
) -> Result<NsdlBreakdown> {
    let (l1, f1) = l1_terms(outputs, mask)?;
    let (l2, f2) = l2_terms(outputs, alignment, inventory, config)?;
    if f1 + f2 > 0 {
        log::debug!("{} log terms hit the probability floor", f1 + f2);
    }
    Ok(NsdlBreakdown {
        total: l1 + config.lambda * l2,
        l1,
        l2,
        frames: outputs.frames(),
        floored: f1 + f2,
    })
}

/// Gradients of `loss_nsdl(...).total` with respect to both heads' logits.
pub fn nsdl_logit_grads(
    outputs: &NsdlOutputs,
    alignment: &[StateId],
    inventory: &StateInventory,
    config: &NsdlLossConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    outputs.check(inventory)?;
    if alignment.len() != outputs.frames() {
        return Err(Error::Contract("alignment length mismatch".into()));
    }
    let sp = outputs.speech_column();
    let mut d1 = Array2::zeros(outputs.p1.dim());
    let mut d2 = Array2::zeros(outputs.p2.dim());
    for (t, &y) in alignment.iter().enumerate() {
        inventory.check(y)?;
        let p1 = outputs.p1.row(t);
        let p2 = outputs.p2.row(t);
        let mut g1 = d1.row_mut(t);
        let speech = inventory.is_speech(y);
        // L1
        if speech {
            g1.assign(&p1);
            g1[sp] -= 1.0;
        } else {
            let q: f64 = p1.slice(s![..sp]).sum().max(LOG_FLOOR);
            g1.assign(&p1);
            for j in 0..sp {
                g1[j] -= p1[j] / q;
            }
        }
        // λ·L2
        let w = config.lambda * config.weight(speech);
        if w != 0.0 {
            let target = if speech { sp } else { inventory.slot(y) };
            for j in 0..=sp {
                g1[j] += w * (p1[j] - if j == target { 1.0 } else { 0.0 });
            }
            if speech {
                let slot = inventory.slot(y);
                let mut g2 = d2.row_mut(t);
                for j in 0..p2.len() {
                    g2[j] = w * (p2[j] - if j == slot { 1.0 } else { 0.0 });
                }
            }
        }
    }
    Ok((d1, d2))
}

/// Single-softmax cross entropy summed over frames; logit column = state id.
pub fn ce_baseline_loss(logits: ArrayView2<'_, f64>, alignment: &[StateId]) -> Result<f64> {
    check_ce(logits, alignment)?;
    let lp = log_softmax_rows(logits);
    Ok(-alignment
        .iter()
        .enumerate()
        .map(|(t, &y)| lp[[t, y]].max(LOG_FLOOR.ln()))
        .sum::<f64>())
}

pub fn ce_logit_grads(logits: ArrayView2<'_, f64>, alignment: &[StateId]) -> Result<Array2<f64>> {
    check_ce(logits, alignment)?;
    let mut g = softmax_rows(logits);
    for (t, &y) in alignment.iter().enumerate() {
        g[[t, y]] -= 1.0;
    }
    Ok(g)
}

fn check_ce(logits: ArrayView2<'_, f64>, alignment: &[StateId]) -> Result<()> {
    if alignment.len() != logits.nrows() {
        return Err(Error::Contract("alignment length mismatch".into()));
    }
    if let Some(&y) = alignment.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::Contract(format!("unknown state id {y}")));
    }
    Ok(())
}
