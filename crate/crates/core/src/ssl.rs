//! Incremental semi-supervised training: decode the untranscribed pool,
//! keep confident hypotheses, append them to the labelled data, retrain.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ManifestEntry;
use crate::data::{featurize, state_counts, stretch_alignment, CorpusStore, FeatureItem};
use crate::decoder::{DecodeConfig, DecodingGraph, WerCounts};
use crate::error::{Error, Result};
use crate::frontend::{apply_augmentation, AugmentationSpec, AugmentedEntry, FrontendConfig, NoisePool};
use crate::inventory::StateId;
use crate::model::AcousticModel;
use crate::nsdl::NsdlLossConfig;
use crate::recognize::{EvalSet, Recognizer};
use crate::seed;
use crate::train::{train_acoustic, TrainConfig, TrainingExample};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledUtterance {
    pub id: String,
    pub source: ManifestEntry,
    pub words: Vec<String>,
    pub alignment: Vec<StateId>,
    pub confidence: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslIteration {
    pub threshold: f64,
    pub transcribed_augmentation: AugmentationSpec,
    pub untranscribed_augmentation: AugmentationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    pub iterations: Vec<SslIteration>,
    /// Retrain from the current best model; otherwise from the initial one.
    pub warm_start: bool,
    /// Training epochs per iteration; the acoustic training budget when unset.
    pub epochs: Option<usize>,
}

impl Default for SslConfig {
    fn default() -> Self {
        let iteration = |threshold| SslIteration {
            threshold,
            transcribed_augmentation: "2x Pit. 3x Vol. 2x VTLP 3x SP".parse().expect("valid spec"),
            untranscribed_augmentation: "3x SP".parse().expect("valid spec"),
        };
        Self {
            iterations: vec![iteration(0.35), iteration(0.3), iteration(0.28)],
            warm_start: true,
            epochs: None,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations.is_empty() {
            return Err(Error::Config("SSL schedule needs at least one iteration".into()));
        }
        if self.epochs == Some(0) {
            return Err(Error::Config("SSL epochs must be positive".into()));
        }
        for it in &self.iterations {
            if !(0.0..=1.0).contains(&it.threshold) {
                return Err(Error::Config(format!("SSL threshold {} outside [0, 1]", it.threshold)));
            }
        }
        Ok(())
    }
}

/// Decodes every pool utterance with `recognizer`. Utterances that cannot
/// be decoded are logged and dropped.
pub fn pseudo_label(
    recognizer: &Recognizer<'_>,
    pool: &[FeatureItem],
    iteration: usize,
) -> Result<Vec<PseudoLabeledUtterance>> {
    let decoded = recognizer.decode_all(pool.par_iter().map(|it| (it.id.as_str(), &it.features)), 1);
    let mut out = Vec::with_capacity(pool.len());
    for (item, d) in pool.iter().zip(decoded) {
        match d {
            Ok(d) => out.push(PseudoLabeledUtterance {
                id: item.id.clone(),
                source: item.source.clone(),
                alignment: d.alignment().states,
                words: d.words().to_vec(),
                confidence: d.confidence,
                iteration,
            }),
            Err(e @ (Error::DecodeFailure { .. } | Error::Numeric(_))) => {
                log::warn!("pseudo-labelling `{}` failed: {e}", item.id)
            }
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::Pipeline("no untranscribed utterance could be decoded".into()));
    }
    Ok(out)
}

/// Records with confidence at or above `threshold`, in input order.
pub fn filter_by_threshold(records: &[PseudoLabeledUtterance], threshold: f64) -> Vec<PseudoLabeledUtterance> {
    records.iter().filter(|r| r.confidence >= threshold).cloned().collect()
}

/// Union of two accepted sets; entries in `newer` replace same-id entries
/// in `older`.
pub fn merge_accepted(
    older: &[PseudoLabeledUtterance],
    newer: &[PseudoLabeledUtterance],
) -> Vec<PseudoLabeledUtterance> {
    let mut out: Vec<PseudoLabeledUtterance> = older
        .iter()
        .filter(|o| !newer.iter().any(|n| n.id == o.id))
        .cloned()
        .collect();
    out.extend(newer.iter().cloned());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Transcribed,
    Pseudo {
        words: Vec<String>,
        alignment: Vec<StateId>,
        confidence: f64,
        iteration: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledEntry {
    pub entry: AugmentedEntry,
    pub label: Label,
}

/// Augmented transcribed entries followed by augmented pseudo-labelled
/// ones.
pub fn assemble_training_set(
    transcribed: &[ManifestEntry],
    accepted: &[PseudoLabeledUtterance],
    iteration: &SslIteration,
    pool: &NoisePool,
    augment_seed: u64,
) -> Result<Vec<AssembledEntry>> {
    let mut out: Vec<AssembledEntry> =
        apply_augmentation(transcribed, &iteration.transcribed_augmentation, pool, augment_seed)?
            .into_iter()
            .map(|entry| AssembledEntry {
                entry,
                label: Label::Transcribed,
            })
            .collect();
    for r in accepted {
        let copies = apply_augmentation(
            std::slice::from_ref(&r.source),
            &iteration.untranscribed_augmentation,
            pool,
            augment_seed,
        )?;
        out.extend(copies.into_iter().map(|entry| AssembledEntry {
            entry,
            label: Label::Pseudo {
                words: r.words.clone(),
                alignment: r.alignment.clone(),
                confidence: r.confidence,
                iteration: r.iteration,
            },
        }));
    }
    Ok(out)
}

/// Features and frame labels for an assembled set. Speed-perturbed pseudo
/// copies are re-aligned to their transcript with `aligner`; copies that
/// fail to align are dropped.
pub fn training_examples(
    store: &dyn CorpusStore,
    assembled: &[AssembledEntry],
    pool: &NoisePool,
    frontend: &FrontendConfig,
    aligner: &Recognizer<'_>,
) -> Result<Vec<TrainingExample>> {
    let built = assembled
        .par_iter()
        .map(|a| {
            let e = &a.entry;
            let features = featurize(&store.waveform(&e.source)?, &e.perturbation, pool, frontend)?;
            let t = features.nrows();
            let alignment = match &a.label {
                Label::Transcribed => stretch_alignment(&store.alignment(&e.source)?, t),
                Label::Pseudo { alignment, .. } if alignment.len() == t => alignment.clone(),
                Label::Pseudo { words, .. } => match aligner.force_align(&features, words) {
                    Ok(ali) => ali.states,
                    Err(err @ (Error::AlignmentFailure { .. } | Error::DecodeFailure { .. })) => {
                        log::warn!("dropping `{}`: {err}", e.id);
                        return Ok(None);
                    }
                    Err(err) => return Err(err),
                },
            };
            Ok(Some(TrainingExample {
                id: e.id.clone(),
                features,
                alignment,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(built.into_iter().flatten().collect())
}

/// Everything an iteration needs besides the evolving state.
pub struct SslContext<'a> {
    pub store: &'a dyn CorpusStore,
    pub transcribed: &'a [ManifestEntry],
    /// Unperturbed features of the untranscribed pool.
    pub pool: &'a [FeatureItem],
    pub dev: &'a EvalSet,
    pub graph: &'a DecodingGraph,
    pub decode: &'a DecodeConfig,
    pub noise: &'a NoisePool,
    pub frontend: &'a FrontendConfig,
    pub train: &'a TrainConfig,
    pub loss: &'a NsdlLossConfig,
    /// Starting point when not warm-starting.
    pub init: &'a AcousticModel,
    pub warm_start: bool,
    pub augment_seed: u64,
    pub train_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslReport {
    pub iteration: usize,
    pub threshold: f64,
    pub decoded: usize,
    pub accepted: usize,
    pub training_utterances: usize,
    pub dev: WerCounts,
    pub elapsed_seconds: f64,
}

impl SslReport {
    pub const CSV_HEADER: &'static str = "iteration,threshold,decoded,accepted,acceptance_rate,dev_wer,elapsed_s";

    pub fn acceptance_rate(&self) -> f64 {
        if self.decoded == 0 {
            0.0
        } else {
            self.accepted as f64 / self.decoded as f64
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{:.4},{:.1}",
            self.iteration,
            self.threshold,
            self.decoded,
            self.accepted,
            self.acceptance_rate(),
            self.dev.wer(),
            self.elapsed_seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslState {
    pub best: AcousticModel,
    pub best_dev: WerCounts,
    /// `None` while the starting model is still the best.
    pub best_iteration: Option<usize>,
    pub accepted: Vec<PseudoLabeledUtterance>,
    pub reports: Vec<SslReport>,
    pub aborted: Vec<usize>,
}

impl SslState {
    pub fn new(model: AcousticModel, ctx: &SslContext<'_>) -> Result<Self> {
        let best_dev = Recognizer::new(&model, ctx.graph, ctx.decode).score_set(ctx.dev)?;
        Ok(Self {
            best: model,
            best_dev,
            best_iteration: None,
            accepted: Vec::new(),
            reports: Vec::new(),
            aborted: Vec::new(),
        })
    }
}

/// One decode, filter, assemble, retrain, evaluate cycle. The best model is
/// replaced only on strictly lower dev errors. A diverged retraining leaves
/// the state as it was apart from the `aborted` list.
pub fn run_iteration(
    mut state: SslState,
    index: usize,
    iteration: &SslIteration,
    ctx: &SslContext<'_>,
) -> Result<SslState> {
    let start = Instant::now();
    let (records, examples) = {
        let rec = Recognizer::new(&state.best, ctx.graph, ctx.decode);
        let records = pseudo_label(&rec, ctx.pool, index)?;
        let accepted = filter_by_threshold(&records, iteration.threshold);
        let merged = merge_accepted(&state.accepted, &accepted);
        let assembled = assemble_training_set(
            ctx.transcribed,
            &merged,
            iteration,
            ctx.noise,
            seed::derive(ctx.augment_seed, "ssl", index as u64),
        )?;
        let examples = training_examples(ctx.store, &assembled, ctx.noise, ctx.frontend, &rec)?;
        log::info!(
            "ssl iteration {index}: {} of {} accepted at {}, {} training utterances",
            accepted.len(),
            records.len(),
            iteration.threshold,
            examples.len()
        );
        ((records.len(), accepted, merged), examples)
    };
    let (decoded, accepted, merged) = records;

    let mut model = if ctx.warm_start { state.best.clone() } else { ctx.init.clone() };
    model.set_priors_from_counts(&state_counts(&examples, model.inventory.len()))?;
    let train_seed = seed::derive(ctx.train_seed, "ssl", index as u64);
    match train_acoustic(&mut model, &examples, ctx.train, ctx.loss, train_seed, &mut |_, _| Ok(())) {
        Ok(_) => {}
        Err(e @ Error::Numeric(_)) => {
            log::warn!("ssl iteration {index} aborted: {e}");
            state.aborted.push(index);
            return Ok(state);
        }
        Err(e) => return Err(e),
    }
    let dev = Recognizer::new(&model, ctx.graph, ctx.decode).score_set(ctx.dev)?;
    state.reports.push(SslReport {
        iteration: index,
        threshold: iteration.threshold,
        decoded,
        accepted: accepted.len(),
        training_utterances: examples.len(),
        dev,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    });
    state.accepted = merged;
    if dev.errors() < state.best_dev.errors() {
        state.best = model;
        state.best_dev = dev;
        state.best_iteration = Some(index);
    }
    Ok(state)
}

/// Tab-separated: id, iteration, confidence, words.
pub fn write_pseudo_labels(path: &Path, records: &[PseudoLabeledUtterance]) -> Result<()> {
    let mut out = String::from("#id\titeration\tconfidence\twords\n");
    for r in records {
        out.push_str(&format!("{}\t{}\t{:.6}\t{}\n", r.id, r.iteration, r.confidence, r.words.join(" ")));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            audio: PathBuf::from(format!("{id}.wav")),
            transcript: vec![],
            alignment: PathBuf::from(format!("{id}.ali")),
            split: Split::UntranscribedTrain,
        }
    }

    fn record(id: &str, confidence: f64, iteration: usize) -> PseudoLabeledUtterance {
        PseudoLabeledUtterance {
            id: id.into(),
            source: entry(id),
            words: vec![format!("w{iteration}")],
            alignment: vec![0; 10],
            confidence,
            iteration,
        }
    }

    #[test]
    fn threshold_examples() {
        let rs = vec![record("a", 0.4, 1), record("b", 0.29, 1), record("c", 0.31, 1)];
        let ids: Vec<_> = filter_by_threshold(&rs, 0.3).into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(filter_by_threshold(&rs, 0.0).len(), 3);
    }

    proptest! {
        #[test]
        fn filtering_is_thresholding(conf in prop::collection::vec(0.0f64..=1.0, 0..40), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let rs: Vec<_> = conf.iter().enumerate().map(|(i, &c)| record(&format!("u{i}"), c, 0)).collect();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let keep = filter_by_threshold(&rs, hi);
            let oracle: Vec<_> = rs.iter().filter(|r| !(r.confidence < hi)).cloned().collect();
            prop_assert_eq!(&keep, &oracle);
            let wider = filter_by_threshold(&rs, lo);
            prop_assert!(keep.iter().all(|r| wider.contains(r)));
        }
    }

    #[test]
    fn merging_prefers_latest_labels() {
        let old = vec![record("a", 0.5, 1), record("b", 0.5, 1)];
        let new = vec![record("b", 0.4, 2), record("c", 0.3, 2)];
        let m = merge_accepted(&old, &new);
        let got: Vec<_> = m.iter().map(|r| (r.id.as_str(), r.iteration)).collect();
        assert_eq!(got, [("a", 1), ("b", 2), ("c", 2)]);
    }

    #[test]
    fn assembly_counts_and_provenance() {
        let transcribed: Vec<_> = (0..100).map(|i| entry(&format!("t{i}"))).collect();
        let accepted: Vec<_> = (0..30).map(|i| record(&format!("p{i}"), 0.5, 2)).collect();
        let it = SslIteration {
            threshold: 0.3,
            transcribed_augmentation: "2x Pit. 3x Vol. 2x VTLP 3x SP".parse().unwrap(),
            untranscribed_augmentation: "3x SP".parse().unwrap(),
        };
        let set = assemble_training_set(&transcribed, &accepted, &it, &NoisePool::default(), 7).unwrap();
        assert_eq!(set.len(), 1090);
        assert!(set[..1000].iter().all(|a| a.label == Label::Transcribed));
        for a in &set[1000..] {
            assert!(matches!(a.label, Label::Pseudo { confidence, iteration: 2, .. } if confidence == 0.5));
        }
        let none = assemble_training_set(&transcribed, &[], &it, &NoisePool::default(), 7).unwrap();
        assert_eq!(none.len(), 1000);
        let mut cfg = SslConfig::default();
        assert_eq!(cfg.iterations.iter().map(|i| i.threshold).collect::<Vec<_>>(), [0.35, 0.3, 0.28]);
        cfg.validate().unwrap();
        cfg.iterations[0].threshold = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn report_row() {
        let r = SslReport {
            iteration: 1,
            threshold: 0.35,
            decoded: 50,
            accepted: 20,
            training_utterances: 120,
            dev: WerCounts {
                reference_words: 100,
                substitutions: 5,
                deletions: 3,
                insertions: 2,
            },
            elapsed_seconds: 3.21,
        };
        assert_eq!(r.to_csv(), "1,0.35,50,20,0.4000,10.0000,3.2");
        assert_eq!(SslReport::CSV_HEADER.split(',').count(), r.to_csv().split(',').count());
    }
}
