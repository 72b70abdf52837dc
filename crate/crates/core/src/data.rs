//! Turns manifest entries into model-ready feature matrices and labels.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::{read_alignment, GeneratedCorpus, ManifestEntry};
use crate::error::{Error, Result};
use crate::frontend::{
    apply_augmentation, normalize_mean, pair_frames, AugmentationSpec, FrontendConfig, NoisePool,
    Perturbation, Waveform,
};
use crate::inventory::StateId;
use crate::train::TrainingExample;

/// Where waveforms and reference alignments live.
pub trait CorpusStore: Sync {
    fn waveform(&self, entry: &ManifestEntry) -> Result<Waveform>;
    fn alignment(&self, entry: &ManifestEntry) -> Result<Vec<StateId>>;
}

/// A corpus written by [`GeneratedCorpus::write`].
#[derive(Debug, Clone)]
pub struct DiskCorpus {
    pub root: PathBuf,
}

impl DiskCorpus {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl CorpusStore for DiskCorpus {
    fn waveform(&self, entry: &ManifestEntry) -> Result<Waveform> {
        Waveform::read_wav(&self.root.join(&entry.audio))
    }

    fn alignment(&self, entry: &ManifestEntry) -> Result<Vec<StateId>> {
        read_alignment(&self.root.join(&entry.alignment))
    }
}

impl CorpusStore for GeneratedCorpus {
    fn waveform(&self, entry: &ManifestEntry) -> Result<Waveform> {
        self.utterance(&entry.id)
            .map(|u| u.waveform.clone())
            .ok_or_else(|| Error::Input(format!("no utterance `{}`", entry.id)))
    }

    fn alignment(&self, entry: &ManifestEntry) -> Result<Vec<StateId>> {
        self.utterance(&entry.id)
            .map(|u| u.true_alignment.clone())
            .ok_or_else(|| Error::Input(format!("no utterance `{}`", entry.id)))
    }
}

/// Log-mel features, per-utterance mean removal, then frame pairing.
pub fn featurize(
    w: &Waveform,
    perturbation: &Perturbation,
    pool: &NoisePool,
    config: &FrontendConfig,
) -> Result<Array2<f64>> {
    let mut f = perturbation.features(w, pool, config)?;
    normalize_mean(&mut f);
    Ok(pair_frames(&f)?.frames)
}

/// Resamples a frame labelling onto `frames` frames by nearest source time.
pub fn stretch_alignment(ali: &[StateId], frames: usize) -> Vec<StateId> {
    if ali.len() == frames || ali.is_empty() {
        return ali.to_vec();
    }
    let ratio = ali.len() as f64 / frames as f64;
    (0..frames)
        .map(|t| ali[(((t as f64 + 0.5) * ratio) as usize).min(ali.len() - 1)])
        .collect()
}

/// Unlabelled feature sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureItem {
    pub id: String,
    pub source: ManifestEntry,
    pub perturbation: Perturbation,
    pub features: Array2<f64>,
}

pub fn noise_pool(store: &dyn CorpusStore, entries: &[ManifestEntry]) -> Result<NoisePool> {
    let items = entries
        .par_iter()
        .map(|e| Ok((e.id.clone(), store.waveform(e)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(NoisePool { items })
}

/// Features for every augmented copy of `entries`, in manifest order.
pub fn feature_items(
    store: &dyn CorpusStore,
    entries: &[ManifestEntry],
    spec: &AugmentationSpec,
    pool: &NoisePool,
    frontend: &FrontendConfig,
    augment_seed: u64,
) -> Result<Vec<FeatureItem>> {
    let expanded = apply_augmentation(entries, spec, pool, augment_seed)?;
    expanded
        .into_par_iter()
        .map(|a| {
            let w = store.waveform(&a.source)?;
            let features = featurize(&w, &a.perturbation, pool, frontend)?;
            Ok(FeatureItem {
                id: a.id,
                source: a.source,
                perturbation: a.perturbation,
                features,
            })
        })
        .collect()
}

/// Training examples labelled with the reference alignments, stretched onto
/// speed-perturbed copies.
pub fn labelled_examples(
    store: &dyn CorpusStore,
    entries: &[ManifestEntry],
    spec: &AugmentationSpec,
    pool: &NoisePool,
    frontend: &FrontendConfig,
    augment_seed: u64,
) -> Result<Vec<TrainingExample>> {
    let items = feature_items(store, entries, spec, pool, frontend, augment_seed)?;
    items
        .into_par_iter()
        .map(|it| {
            let ali = store.alignment(&it.source)?;
            let t = it.features.nrows();
            if it.perturbation.speed_factor() == 1.0 && ali.len() != t {
                return Err(Error::Input(format!(
                    "`{}`: {} alignment frames for {t} feature frames",
                    it.id,
                    ali.len()
                )));
            }
            Ok(TrainingExample {
                id: it.id,
                alignment: stretch_alignment(&ali, t),
                features: it.features,
            })
        })
        .collect()
}

/// Occupation count per state.
pub fn state_counts(examples: &[TrainingExample], num_states: usize) -> Vec<usize> {
    let mut counts = vec![0; num_states];
    for ex in examples {
        for &s in &ex.alignment {
            counts[s] += 1;
        }
    }
    counts
}

/// Reads `written.txt`: one sentence per line.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig, Split};

    #[test]
    fn stretching() {
        assert_eq!(stretch_alignment(&[1, 1, 2, 2], 4), vec![1, 1, 2, 2]);
        assert_eq!(stretch_alignment(&[1, 2], 4), vec![1, 1, 2, 2]);
        assert_eq!(stretch_alignment(&[1, 1, 2, 2, 3, 3], 3), vec![1, 2, 3]);
        let long: Vec<usize> = (0..100).map(|t| t / 10).collect();
        let s = stretch_alignment(&long, 111);
        assert_eq!(s.len(), 111);
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((s[0], s[110]), (0, 9));
    }

    #[test]
    fn examples_from_memory_and_disk_agree() {
        let cfg = CorpusConfig {
            transcribed: 4,
            untranscribed: 0,
            dev: 0,
            eval: 0,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.write(dir.path()).unwrap();
        let entries = corpus.manifest.split(Split::TranscribedTrain);
        let spec: AugmentationSpec = "3x SP".parse().unwrap();
        let fe = FrontendConfig::default();
        let pool = NoisePool::default();
        let a = labelled_examples(&corpus, &entries, &spec, &pool, &fe, 1).unwrap();
        let b = labelled_examples(&DiskCorpus::new(dir.path()), &entries, &spec, &pool, &fe, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        for ex in &a {
            assert_eq!(ex.features.ncols(), 160);
            assert_eq!(ex.alignment.len(), ex.features.nrows());
        }
        // the factor-1 copy keeps the reference alignment
        let plain = a.iter().find(|e| e.id.ends_with("#sp-1")).unwrap();
        let src = corpus.utterance(plain.id.split('#').next().unwrap()).unwrap();
        assert_eq!(plain.alignment, src.true_alignment);
    }
}
