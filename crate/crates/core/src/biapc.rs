//! Bidirectional autoregressive predictive coding: the forward path of the
//! trunk regresses the frame `n` steps ahead, the backward path the frame `n`
//! steps behind, and the two mean absolute errors are summed.

use ndarray::{s, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{chunk_sequence, ChunkSpec};
use crate::model::AcousticModel;
use crate::nnet::{
    accumulate, join, num_trainable, scale_trainable, zeros_like, BlstmStack, BlstmStackConfig,
    BlstmTrace, Checkpoint, Linear, Mode, Module, ParamKind, ParameterSet, Routing, Sgd,
    SgdConfig, Stage,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiApcConfig {
    /// Prediction offset in frames.
    pub n: usize,
    pub epochs: usize,
    pub batch_chunks: usize,
    pub sgd: SgdConfig,
    pub lr_decay: f64,
    pub chunk: ChunkSpec,
}

impl Default for BiApcConfig {
    fn default() -> Self {
        Self {
            n: 2,
            epochs: 20,
            batch_chunks: 4,
            sgd: SgdConfig {
                learning_rate: 0.02,
                ..SgdConfig::default()
            },
            lr_decay: 0.95,
            chunk: ChunkSpec::default(),
        }
    }
}

impl BiApcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("prediction offset n must be >= 1".into()));
        }
        if self.epochs == 0 || self.batch_chunks == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Regression targets for a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BiApcBatch {
    pub input: Array2<f64>,
    /// `x[n..T]`, predicted from positions `0..T-n`.
    pub forward_targets: Array2<f64>,
    /// `x[0..T-n]`, predicted from positions `n..T`.
    pub backward_targets: Array2<f64>,
}

pub fn biapc_targets(features: ArrayView2<'_, f64>, n: usize) -> Result<BiApcBatch> {
    let t = features.nrows();
    if t <= n {
        return Err(Error::Input(format!("need more than {n} frames, got {t}")));
    }
    Ok(BiApcBatch {
        input: features.to_owned(),
        forward_targets: features.slice(s![n.., ..]).to_owned(),
        backward_targets: features.slice(s![..t - n, ..]).to_owned(),
    })
}

/// Split-path trunk with one regression head per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct BiApcModel {
    pub trunk: BlstmStack,
    pub head_fwd: Linear,
    pub head_bwd: Linear,
}

/// Predictions for positions `0..T-n` (forward) and `n..T` (backward).
#[derive(Debug, Clone, PartialEq)]
pub struct BiApcPredictions {
    pub forward: Array2<f64>,
    pub backward: Array2<f64>,
}

impl BiApcModel {
    pub fn new(trunk: &BlstmStackConfig, rng: &mut seed::Rng) -> Result<Self> {
        let trunk = BlstmStack::new(trunk, Routing::Split, rng)?;
        let h = trunk.hidden();
        let d = trunk.config.input_dim;
        Ok(Self {
            head_fwd: Linear::new(h, d, rng),
            head_bwd: Linear::new(h, d, rng),
            trunk,
        })
    }

    /// Prediction at every frame from the final block's per-direction halves.
    fn all_predictions(&self, h: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let hd = self.trunk.hidden();
        Ok((
            self.head_fwd.forward(h.slice(s![.., ..hd]))?,
            self.head_bwd.forward(h.slice(s![.., hd..]))?,
        ))
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, n: usize, mode: Mode<'_>) -> Result<BiApcPredictions> {
        let t = x.nrows();
        if t <= n {
            return Err(Error::Input(format!("need more than {n} frames, got {t}")));
        }
        let h = self.trunk.forward(x, mode)?.output;
        let (f, b) = self.all_predictions(h.view())?;
        Ok(BiApcPredictions {
            forward: f.slice(s![..t - n, ..]).to_owned(),
            backward: b.slice(s![n.., ..]).to_owned(),
        })
    }

    pub fn to_checkpoint(&self, digest: &str) -> Checkpoint {
        Checkpoint {
            stage: Stage::Biapc,
            digest: digest.to_string(),
            params: ParameterSet::of(self),
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, trunk: &BlstmStackConfig, digest: &str) -> Result<Self> {
        ckpt.expect_digest(digest)?;
        ckpt.expect_stage(&[Stage::Biapc])?;
        let mut m = Self::new(trunk, &mut seed::rng(0, "shape", 0))?;
        ckpt.params.restore_into(&mut m)?;
        Ok(m)
    }

    /// Loss and gradients for the core rows `core` of a chunk whose frames
    /// are `full[span]`. Targets come from the full sequence.
    pub fn chunk_gradient(
        &self,
        full: ArrayView2<'_, f64>,
        span: std::ops::Range<usize>,
        core: std::ops::Range<usize>,
        n: usize,
        rng: &mut seed::Rng,
    ) -> Result<(f64, BiApcModel, BlstmTrace)> {
        let total = full.nrows();
        let x = full.slice(s![span.clone(), ..]);
        let fw = self.trunk.forward(x, Mode::Train(rng))?;
        let hd = self.trunk.hidden();
        let d = full.ncols();
        let (pf, pb) = self.all_predictions(fw.output.view())?;
        let mut dpf = Array2::zeros(pf.dim());
        let mut dpb = Array2::zeros(pb.dim());
        let abs_t = |t: usize| span.start + t;
        let fwd_rows: Vec<usize> = core.clone().filter(|&t| abs_t(t) + n < total).collect();
        let bwd_rows: Vec<usize> = core.clone().filter(|&t| abs_t(t) >= n).collect();
        let mut loss = 0.0;
        for (rows, pred, grad, offset) in [
            (&fwd_rows, &pf, &mut dpf, n as isize),
            (&bwd_rows, &pb, &mut dpb, -(n as isize)),
        ] {
            if rows.is_empty() {
                continue;
            }
            let scale = 1.0 / (rows.len() * d) as f64;
            for &t in rows {
                let target = full.row((abs_t(t) as isize + offset) as usize);
                for j in 0..d {
                    let e = pred[[t, j]] - target[j];
                    loss += e.abs() * scale;
                    grad[[t, j]] = e.signum() * if e == 0.0 { 0.0 } else { scale };
                }
            }
        }
        let mut grads = zeros_like(self);
        let h = fw.output.view();
        let dhf = self.head_fwd.backward(h.slice(s![.., ..hd]), dpf.view(), &mut grads.head_fwd);
        let dhb = self.head_bwd.backward(h.slice(s![.., hd..]), dpb.view(), &mut grads.head_bwd);
        let mut dy = Array2::zeros(fw.output.dim());
        dy.slice_mut(s![.., ..hd]).assign(&dhf);
        dy.slice_mut(s![.., hd..]).assign(&dhb);
        self.trunk.backward(&fw, dy.view(), &mut grads.trunk)?;
        Ok((loss, grads, fw.trace.expect("train mode")))
    }
}

impl Module for BiApcModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        self.trunk.visit(&join(prefix, "trunk"), f);
        self.head_fwd.visit(&join(prefix, "head_fwd"), f);
        self.head_bwd.visit(&join(prefix, "head_bwd"), f);
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>),
    ) {
        self.trunk.visit_mut(&join(prefix, "trunk"), f);
        self.head_fwd.visit_mut(&join(prefix, "head_fwd"), f);
        self.head_bwd.visit_mut(&join(prefix, "head_bwd"), f);
    }
}

fn mae(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    (&a - &b).mapv(f64::abs).mean().unwrap_or(0.0)
}

/// Sum of the per-direction mean absolute errors.
pub fn biapc_loss(pred: &BiApcPredictions, batch: &BiApcBatch) -> Result<f64> {
    if pred.forward.dim() != batch.forward_targets.dim()
        || pred.backward.dim() != batch.backward_targets.dim()
    {
        return Err(Error::Contract("prediction and target shapes differ".into()));
    }
    Ok(mae(pred.forward.view(), batch.forward_targets.view())
        + mae(pred.backward.view(), batch.backward_targets.view()))
}

/// Pretrains a split-path trunk on unlabelled feature sequences.
/// Returns the model and the mean per-chunk loss of every epoch.
pub fn pretrain(
    data: &[Array2<f64>],
    trunk: &BlstmStackConfig,
    config: &BiApcConfig,
    pretrain_seed: u64,
) -> Result<(BiApcModel, Vec<f64>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no untranscribed data to pretrain on".into()));
    }
    let mut model = BiApcModel::new(trunk, &mut seed::rng(pretrain_seed, "biapc-init", 0))?;
    let mut jobs = Vec::new();
    for (u, x) in data.iter().enumerate() {
        if x.nrows() <= config.n {
            continue;
        }
        for c in chunk_sequence("", x.nrows(), config.chunk)? {
            let span = c.span();
            let core = (c.core.start - span.start)..(c.core.end - span.start);
            jobs.push((u, span, core));
        }
    }
    if jobs.is_empty() {
        return Err(Error::Config("every sequence is too short to pretrain on".into()));
    }
    let mut opt = Sgd::new(config.sgd.clone(), num_trainable(&model));
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..jobs.len()).collect();
        order.shuffle(&mut seed::rng(pretrain_seed, "biapc-shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_chunks) {
            let m = &model;
            let results = batch
                .par_iter()
                .map(|&j| {
                    let (u, span, core) = &jobs[j];
                    let mut rng = seed::rng(seed::derive(pretrain_seed, "biapc-dropout", epoch as u64), "chunk", j as u64);
                    m.chunk_gradient(data[*u].view(), span.clone(), core.clone(), config.n, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = zeros_like(&model);
            for (loss, g, _) in &results {
                epoch_loss += loss;
                accumulate(&mut grads, g);
            }
            for (_, _, trace) in &results {
                model.trunk.update_running(trace);
            }
            scale_trainable(&mut grads, 1.0 / results.len() as f64);
            if let Err(e) = opt.step(&mut model, &grads) {
                match e {
                    Error::Numeric(msg) => log::warn!("pretraining epoch {epoch}: {msg}"),
                    e => return Err(e),
                }
            }
        }
        let mean = epoch_loss / jobs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("pretraining diverged in epoch {epoch}")));
        }
        log::info!("bi-apc epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
        opt.config.learning_rate *= config.lr_decay;
    }
    Ok((model, curve))
}

/// Copies the pretrained trunk (weights and normalisation statistics) into
/// `target`; its output heads are left as initialised.
pub fn transfer(pretrained: &BiApcModel, target: &mut AcousticModel) -> Result<()> {
    let source = ParameterSet::of(pretrained);
    let mut mismatch = None;
    target.visit("", &mut |name, _, v| {
        if mismatch.is_some() || !name.starts_with("trunk.") {
            return;
        }
        match source.get(name) {
            Some(t) if t.shape == v.shape() => {}
            Some(t) => {
                mismatch = Some(format!(
                    "tensor `{name}` has shape {:?} in the pretrained model but {:?} here",
                    t.shape,
                    v.shape()
                ))
            }
            None => mismatch = Some(format!("tensor `{name}` missing from the pretrained model")),
        }
    });
    if let Some(m) = mismatch {
        return Err(Error::Config(m));
    }
    source
        .restore_filtered(target, |n| n.starts_with("trunk."))
        .map_err(|e| Error::Config(e.to_string()))
}
