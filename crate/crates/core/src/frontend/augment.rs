use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::logmel::{extract_with, SpectralWarp};
use super::perturb::{mix_noise, speed_perturb, volume_perturb, NoiseMode};
use super::{FeatureSequence, FrontendConfig, Waveform};
use crate::corpus::ManifestEntry;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Speed,
    Volume,
    Pitch,
    Vtlp,
    Noise,
}

impl TransformKind {
    fn tag(self) -> &'static str {
        match self {
            TransformKind::Speed => "sp",
            TransformKind::Volume => "vol",
            TransformKind::Pitch => "pit",
            TransformKind::Vtlp => "vtlp",
            TransformKind::Noise => "noise",
        }
    }

    fn label(self) -> &'static str {
        match self {
            TransformKind::Speed => "SP",
            TransformKind::Volume => "Vol.",
            TransformKind::Pitch => "Pit.",
            TransformKind::Vtlp => "VTLP",
            TransformKind::Noise => "Noise",
        }
    }

    /// Parameter range sampled for randomised copies.
    pub fn default_range(self) -> (f64, f64) {
        match self {
            TransformKind::Speed => (0.9, 1.1),
            TransformKind::Volume => (0.5, 2.0),
            TransformKind::Pitch | TransformKind::Vtlp => (0.9, 1.1),
            TransformKind::Noise => (5.0, 20.0),
        }
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim_end_matches('.').to_ascii_lowercase();
        Ok(match key.as_str() {
            "sp" | "speed" => TransformKind::Speed,
            "vol" | "volume" => TransformKind::Volume,
            "pit" | "pitch" => TransformKind::Pitch,
            "vtlp" => TransformKind::Vtlp,
            "noise" => TransformKind::Noise,
            _ => return Err(Error::Config(format!("unknown augmentation transform `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentItem {
    pub kind: TransformKind,
    pub copies: usize,
    pub range: (f64, f64),
}

/// Ordered list of transforms with multiplicities, written like
/// `2x Pit. 3x Vol. 2x VTLP 2x Noise 3x SP`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentationSpec {
    pub items: Vec<AugmentItem>,
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Copies produced per source utterance.
    pub fn fold(&self) -> usize {
        if self.items.is_empty() {
            1
        } else {
            self.items.iter().map(|i| i.copies).sum()
        }
    }

    pub fn uses(&self, kind: TransformKind) -> bool {
        self.items.iter().any(|i| i.kind == kind)
    }
}

impl FromStr for AugmentationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<&str> = s.split_whitespace().collect();
        if tokens.is_empty() || tokens == ["-"] {
            return Ok(Self::none());
        }
        if tokens.len() % 2 != 0 {
            return Err(Error::Config(format!("malformed augmentation spec `{s}`")));
        }
        let items = tokens
            .chunks(2)
            .map(|pair| {
                let copies: usize = pair[0]
                    .strip_suffix(['x', 'X'])
                    .and_then(|n| n.parse().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| {
                        Error::Config(format!("bad multiplicity `{}` in `{s}`", pair[0]))
                    })?;
                let kind: TransformKind = pair[1].parse()?;
                Ok(AugmentItem {
                    kind,
                    copies,
                    range: kind.default_range(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items })
    }
}

impl fmt::Display for AugmentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.items.is_empty() {
            return f.write_str("-");
        }
        let parts: Vec<String> = self
            .items
            .iter()
            .map(|i| format!("{}x {}", i.copies, i.kind.label()))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

impl Serialize for AugmentationSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AugmentationSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Named noise sources, typically the non-speech utterances removed from
/// the transcribed set.
#[derive(Debug, Clone, Default)]
pub struct NoisePool {
    pub items: Vec<(String, Waveform)>,
}

impl NoisePool {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Waveform> {
        self.items.iter().find(|(i, _)| i == id).map(|(_, w)| w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    None,
    Speed(f64),
    Volume(f64),
    Pitch(f64),
    Vtlp(f64),
    Noise {
        source: String,
        snr_db: f64,
        mode: NoiseMode,
        seed: u64,
    },
}

impl Perturbation {
    /// Time-scale factor applied to the audio; 1 unless speed-perturbed.
    pub fn speed_factor(&self) -> f64 {
        match self {
            Perturbation::Speed(f) => *f,
            _ => 1.0,
        }
    }

    /// Renders the perturbed utterance as 80-dim log-mel features.
    pub fn features(
        &self,
        w: &Waveform,
        pool: &NoisePool,
        config: &FrontendConfig,
    ) -> Result<FeatureSequence> {
        let plain = SpectralWarp::default();
        match self {
            Perturbation::None => extract_with(w, config, plain),
            Perturbation::Speed(f) => extract_with(&speed_perturb(w, *f)?, config, plain),
            Perturbation::Volume(g) => extract_with(&volume_perturb(w, *g)?, config, plain),
            Perturbation::Pitch(b) => super::pitch_warp(w, config, *b),
            Perturbation::Vtlp(a) => super::vtlp_warp(w, config, *a),
            Perturbation::Noise {
                source,
                snr_db,
                mode,
                seed,
            } => {
                let noise = pool.get(source).ok_or_else(|| {
                    Error::Config(format!("noise source `{source}` not in pool"))
                })?;
                let mut rng = seed::rng(*seed, "mix", 0);
                let mixed = mix_noise(w, noise, *snr_db, *mode, &mut rng)?;
                extract_with(&mixed.waveform, config, plain)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEntry {
    /// `source#transform-copy`, or the source id when unaugmented.
    pub id: String,
    pub source: ManifestEntry,
    pub perturbation: Perturbation,
}

fn spread(copies: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    if copies == 1 {
        return vec![1.0f64.clamp(lo, hi)];
    }
    (0..copies)
        .map(|i| lo + (hi - lo) * i as f64 / (copies - 1) as f64)
        .collect()
}

/// Expands every entry into `spec.fold()` copies. Speed copies use fixed,
/// evenly spaced factors (0.9, 1, 1.1 for three copies); all other
/// transforms draw parameters per copy from a stream keyed by
/// (seed, utterance id, transform, copy index).
pub fn apply_augmentation(
    entries: &[ManifestEntry],
    spec: &AugmentationSpec,
    pool: &NoisePool,
    base_seed: u64,
) -> Result<Vec<AugmentedEntry>> {
    if spec.uses(TransformKind::Noise) && pool.is_empty() {
        return Err(Error::Config("noise augmentation requested with an empty pool".into()));
    }
    if spec.is_empty() {
        return Ok(entries
            .iter()
            .map(|e| AugmentedEntry {
                id: e.id.clone(),
                source: e.clone(),
                perturbation: Perturbation::None,
            })
            .collect());
    }
    let mut out = Vec::with_capacity(entries.len() * spec.fold());
    for e in entries {
        let utt_seed = seed::derive_str(base_seed, "augment", &e.id);
        for item in &spec.items {
            let speeds = spread(item.copies, item.range);
            for copy in 0..item.copies {
                let mut rng = seed::rng(utt_seed, item.kind.tag(), copy as u64);
                let (lo, hi) = item.range;
                let perturbation = match item.kind {
                    TransformKind::Speed => Perturbation::Speed(speeds[copy]),
                    TransformKind::Volume => {
                        Perturbation::Volume((rng.random_range(lo.ln()..=hi.ln())).exp())
                    }
                    TransformKind::Pitch => Perturbation::Pitch(rng.random_range(lo..=hi)),
                    TransformKind::Vtlp => Perturbation::Vtlp(rng.random_range(lo..=hi)),
                    TransformKind::Noise => {
                        let pick = rng.random_range(0..pool.items.len());
                        Perturbation::Noise {
                            source: pool.items[pick].0.clone(),
                            snr_db: rng.random_range(lo..=hi),
                            mode: if rng.random_bool(0.5) {
                                NoiseMode::Foreground
                            } else {
                                NoiseMode::Background
                            },
                            seed: rng.random(),
                        }
                    }
                };
                out.push(AugmentedEntry {
                    id: format!("{}#{}-{}", e.id, item.kind.tag(), copy),
                    source: e.clone(),
                    perturbation,
                });
            }
        }
    }
    Ok(out)
}
