//! Chunk-wise minibatch training of the acoustic model.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{chunk_sequence, ChunkSpec};
use crate::inventory::StateId;
use crate::model::AcousticModel;
use crate::nnet::{accumulate, num_trainable, scale_trainable, zeros_like, Sgd, SgdConfig};
use crate::nsdl::{NsdlBreakdown, NsdlLossConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Chunks whose gradients are summed before one optimizer step.
    pub batch_chunks: usize,
    pub sgd: SgdConfig,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub chunk: ChunkSpec,
    /// Score the dev set every this many epochs during pipeline training;
    /// 0 scores only the final model.
    pub dev_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_chunks: 4,
            sgd: SgdConfig::default(),
            lr_decay: 0.8,
            chunk: ChunkSpec::default(),
            dev_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_chunks == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.sgd.learning_rate > 0.0) || !(0.0..1.0).contains(&self.sgd.momentum) {
            return Err(Error::Config("learning rate must be > 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Paired features with a frame-level state alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub features: Array2<f64>,
    pub alignment: Vec<StateId>,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub utterance: String,
    pub frames: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

impl LossRow {
    pub const CSV_HEADER: &'static str = "epoch,utterance,frames,l1,l2,total";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6}",
            self.epoch, self.utterance, self.frames, self.l1, self.l2, self.total
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Summed loss over all core frames.
    pub loss: NsdlBreakdown,
    pub skipped_steps: usize,
}

impl EpochSummary {
    pub fn mean_loss(&self) -> f64 {
        self.loss.mean_total()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochSummary>,
    pub rows: Vec<LossRow>,
}

struct Job<'a> {
    example: &'a TrainingExample,
    span: std::ops::Range<usize>,
    core: std::ops::Range<usize>,
}

/// Trains in place. Each chunk draws dropout masks from its own stream keyed
/// by (seed, epoch, position), so results do not depend on thread count.
/// `on_epoch` runs after every epoch (e.g. to score a dev set).
pub fn train_acoustic(
    model: &mut AcousticModel,
    data: &[TrainingExample],
    config: &TrainConfig,
    loss: &NsdlLossConfig,
    train_seed: u64,
    on_epoch: &mut dyn FnMut(usize, &AcousticModel) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training data".into()));
    }
    let mut jobs = Vec::new();
    for ex in data {
        if ex.features.nrows() != ex.alignment.len() {
            return Err(Error::Contract(format!(
                "{}: {} frames but {} alignment labels",
                ex.id,
                ex.features.nrows(),
                ex.alignment.len()
            )));
        }
        for c in chunk_sequence(&ex.id, ex.features.nrows(), config.chunk)? {
            let span = c.span();
            let core = (c.core.start - span.start)..(c.core.end - span.start);
            jobs.push(Job {
                example: ex,
                span,
                core,
            });
        }
    }

    let mut opt = Sgd::new(config.sgd.clone(), num_trainable(model));
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..jobs.len()).collect();
        order.shuffle(&mut seed::rng(train_seed, "shuffle", epoch as u64));
        let mut summary = EpochSummary {
            epoch,
            loss: NsdlBreakdown::default(),
            skipped_steps: 0,
        };
        for batch in order.chunks(config.batch_chunks) {
            let m: &AcousticModel = model;
            let results = batch
                .par_iter()
                .map(|&j| {
                    let job = &jobs[j];
                    let x = job.example.features.slice(s![job.span.clone(), ..]);
                    let ali = &job.example.alignment[job.span.start + job.core.start..job.span.start + job.core.end];
                    let mut rng = seed::rng(seed::derive(train_seed, "dropout", epoch as u64), "chunk", j as u64);
                    m.chunk_gradient(x, job.core.clone(), ali, loss, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = zeros_like(model);
            let mut frames = 0;
            for (r, &j) in results.iter().zip(batch) {
                accumulate(&mut grads, &r.grads);
                frames += r.breakdown.frames;
                summary.loss.add(&r.breakdown);
                report.rows.push(LossRow {
                    epoch,
                    utterance: jobs[j].example.id.clone(),
                    frames: r.breakdown.frames,
                    l1: r.breakdown.l1,
                    l2: r.breakdown.l2,
                    total: r.breakdown.total,
                });
            }
            for r in &results {
                model.trunk.update_running(&r.trace);
            }
            scale_trainable(&mut grads, 1.0 / frames as f64);
            match opt.step(model, &grads) {
                Ok(_) => {}
                Err(Error::Numeric(msg)) => {
                    log::warn!("epoch {epoch}: {msg}");
                    summary.skipped_steps += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if !summary.loss.total.is_finite() {
            return Err(Error::Numeric(format!("training diverged in epoch {epoch}")));
        }
        log::info!(
            "epoch {epoch}: mean loss {:.4} over {} frames",
            summary.mean_loss(),
            summary.loss.frames
        );
        report.epochs.push(summary);
        opt.config.learning_rate *= config.lr_decay;
        on_epoch(epoch, model)?;
    }
    Ok(report)
}
