//! Deterministic synthetic toy-language corpus.
//!
//! Utterances are CVC words rendered by formant-sum synthesis, surrounded
//! and interleaved by non-speech runs of three kinds. The total
//! non-speech:speech frame ratio of every split is calibrated to a target.

mod phones;
mod synth;

pub use phones::{default_phones, default_vocabulary, spell, PhoneSpec};
pub use synth::{speech_state, NonSpeechKind, NONSPEECH_STATES, STATES_PER_PHONE};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frontend::{FrontendConfig, Waveform};
use crate::inventory::{StateId, StateInventory};
use crate::seed;
use synth::{Run, Speaker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    pub phones: Vec<PhoneSpec>,
    pub vocabulary: Vec<String>,
    pub transcribed: usize,
    pub untranscribed: usize,
    pub dev: usize,
    pub eval: usize,
    /// Share of transcribed-train utterances that contain no speech.
    pub nonspeech_fraction: f64,
    /// Target total non-speech:speech frame ratio per split.
    pub target_ratio: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub speakers: usize,
    /// Preferred successors per word in the sentence grammar.
    pub successors: usize,
    pub written_sentences: usize,
    pub speech_amplitude: f64,
    pub hesitation_amplitude: f64,
    pub babble_amplitude: f64,
    pub background_level: (f64, f64),
    /// Per-word loudness factor range, for mumbled or faint words.
    pub word_gain_range: (f64, f64),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            phones: default_phones(),
            vocabulary: default_vocabulary(),
            transcribed: 100,
            untranscribed: 60,
            dev: 20,
            eval: 20,
            nonspeech_fraction: 211.0 / 1445.0,
            target_ratio: 2.2,
            min_words: 1,
            max_words: 4,
            speakers: 12,
            successors: 3,
            written_sentences: 400,
            speech_amplitude: 0.3,
            hesitation_amplitude: 0.1,
            babble_amplitude: 0.06,
            background_level: (0.002, 0.01),
            word_gain_range: (1.0, 1.0),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.phones.len() < 8 {
            return bad(format!("need at least 8 phones, got {}", self.phones.len()));
        }
        if self.vocabulary.len() < 20 {
            return bad(format!("need at least 20 words, got {}", self.vocabulary.len()));
        }
        if !(self.target_ratio >= 0.0) {
            return bad(format!("target ratio {} must be >= 0", self.target_ratio));
        }
        if !(0.0..=1.0).contains(&self.nonspeech_fraction) {
            return bad("non-speech fraction must lie in [0, 1]".into());
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("word count range must satisfy 1 <= min <= max".into());
        }
        if self.speakers == 0 {
            return bad("need at least one speaker".into());
        }
        for (name, (lo, hi)) in [
            ("background_level", self.background_level),
            ("word_gain_range", self.word_gain_range),
        ] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} must satisfy 0 <= low <= high"));
            }
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        for p in &self.phones {
            if p.mean_duration < 3.0 {
                return bad(format!("phone `{}` shorter than 3 frames", p.symbol));
            }
            if !(0.0..=1.0).contains(&p.noise_floor) {
                return bad(format!("phone `{}` noise floor outside [0, 1]", p.symbol));
            }
            for &(f, a) in &p.formants {
                if !(f > 0.0 && f < nyquist) {
                    return bad(format!("phone `{}` formant {f} Hz above Nyquist", p.symbol));
                }
                if !(0.0..=1.0).contains(&a) {
                    return bad(format!("phone `{}` amplitude {a} outside [0, 1]", p.symbol));
                }
            }
        }
        let mut seen = HashSet::new();
        for w in &self.vocabulary {
            if !seen.insert(w) {
                return bad(format!("duplicate word `{w}`"));
            }
            if spell(w, &self.phones).is_none() {
                return bad(format!("word `{w}` uses an unknown phone"));
            }
        }
        Ok(())
    }

    /// Word spellings as phone indices, in vocabulary order.
    pub fn lexicon(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.vocabulary
            .iter()
            .map(|w| {
                spell(w, &self.phones)
                    .map(|p| (w.clone(), p))
                    .ok_or_else(|| Error::Config(format!("word `{w}` uses an unknown phone")))
            })
            .collect()
    }

    pub fn inventory(&self) -> StateInventory {
        StateInventory::contiguous(NONSPEECH_STATES, STATES_PER_PHONE * self.phones.len())
            .expect("non-empty sets")
    }

    /// Hash of the canonical serialisation together with the seed.
    pub fn digest(&self, seed: u64) -> String {
        let text = toml::to_string(self).expect("config serialises");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    TranscribedTrain,
    UntranscribedTrain,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::TranscribedTrain,
        Split::UntranscribedTrain,
        Split::Dev,
        Split::Eval,
    ];

    fn prefix(self) -> &'static str {
        match self {
            Split::TranscribedTrain => "tr",
            Split::UntranscribedTrain => "un",
            Split::Dev => "dv",
            Split::Eval => "ev",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::TranscribedTrain => "transcribed-train",
            Split::UntranscribedTrain => "untranscribed-train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.to_string() == s)
            .ok_or_else(|| Error::Input(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    pub transcript: Vec<String>,
    pub alignment: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub digest: String,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .cloned()
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Tab-separated lines: id, audio path, transcript, alignment path,
    /// split; preceded by `#seed` and `#digest` header lines.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#seed\t{}\n#digest\t{}\n", self.seed, self.digest);
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.audio.display(),
                e.transcript.join(" "),
                e.alignment.display(),
                e.split
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut seed = None;
        let mut digest = None;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                match rest.split_once('\t') {
                    Some(("seed", v)) => seed = v.parse().ok(),
                    Some(("digest", v)) => digest = Some(v.to_string()),
                    _ => {}
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::format(path, format!("line {}: expected 5 fields", n + 1)));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                audio: f[1].into(),
                transcript: f[2].split_whitespace().map(String::from).collect(),
                alignment: f[3].into(),
                split: f[4]
                    .parse()
                    .map_err(|e: Error| Error::format(path, format!("line {}: {e}", n + 1)))?,
            });
        }
        Ok(Self {
            entries,
            seed: seed.ok_or_else(|| Error::format(path, "missing #seed header"))?,
            digest: digest.ok_or_else(|| Error::format(path, "missing #digest header"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub utterance_id: String,
    pub waveform: Waveform,
    pub transcript: Vec<String>,
    pub true_alignment: Vec<StateId>,
    pub speaker_id: String,
}

/// Sparse bigram grammar the corpus sentences are drawn from.
#[derive(Debug, Clone)]
struct Grammar {
    successors: Vec<Vec<usize>>,
}

impl Grammar {
    fn draw(vocab: usize, successors: usize, corpus_seed: u64) -> Self {
        let mut r = seed::rng(corpus_seed, "grammar", 0);
        let all: Vec<usize> = (0..vocab).collect();
        let successors = (0..vocab)
            .map(|_| {
                all.choose_multiple(&mut r, successors.clamp(1, vocab))
                    .copied()
                    .collect()
            })
            .collect();
        Self { successors }
    }

    fn sentence<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let vocab = self.successors.len();
        let mut out: Vec<usize> = Vec::with_capacity(len);
        for _ in 0..len {
            let next = match out.last() {
                Some(&prev) if rng.random_bool(0.8) => {
                    *self.successors[prev].choose(rng).expect("non-empty")
                }
                _ => rng.random_range(0..vocab),
            };
            out.push(next);
        }
        out
    }
}

/// In-memory corpus plus the manifest describing its on-disk layout.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub config: CorpusConfig,
    pub manifest: CorpusManifest,
    pub utterances: Vec<SyntheticUtterance>,
    /// Extra text-only sentences for language modelling.
    pub written_text: Vec<Vec<String>>,
}

impl GeneratedCorpus {
    pub fn utterance(&self, id: &str) -> Option<&SyntheticUtterance> {
        self.utterances.iter().find(|u| u.utterance_id == id)
    }

    /// Writes `manifest.tsv`, `wav/*.wav`, `ali/*.ali`, `written.txt` and
    /// `lexicon.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["wav", "ali"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        let lookup: BTreeMap<&str, &SyntheticUtterance> = self
            .utterances
            .iter()
            .map(|u| (u.utterance_id.as_str(), u))
            .collect();
        for e in &self.manifest.entries {
            let u = lookup[e.id.as_str()];
            u.waveform.write_wav(&dir.join(&e.audio))?;
            write_alignment(&dir.join(&e.alignment), &u.true_alignment)?;
        }
        let text: String = self
            .written_text
            .iter()
            .map(|s| s.join(" ") + "\n")
            .collect();
        let p = dir.join("written.txt");
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        let lex: String = self
            .config
            .lexicon()?
            .iter()
            .map(|(w, ph)| {
                let syms: Vec<&str> = ph.iter().map(|&i| self.config.phones[i].symbol.as_str()).collect();
                format!("{w}\t{}\n", syms.join(" "))
            })
            .collect();
        let p = dir.join("lexicon.txt");
        fs::write(&p, lex).map_err(|e| Error::io(&p, e))?;
        self.manifest.write(&dir.join("manifest.tsv"))
    }
}

pub fn write_alignment(path: &Path, ali: &[StateId]) -> Result<()> {
    let text: String = ali.iter().map(|s| format!("{s}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_alignment(path: &Path) -> Result<Vec<StateId>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Input(format!("missing alignment file {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::format(path, format!("bad state id `{l}`")))
        })
        .collect()
}

struct Planned {
    id: String,
    split: Split,
    speaker: usize,
    words: Vec<usize>,
    runs: Vec<Run>,
}

fn plan_split(
    config: &CorpusConfig,
    lexicon: &[Vec<usize>],
    grammar: &Grammar,
    split: Split,
    count: usize,
    nonspeech: usize,
    corpus_seed: u64,
) -> Vec<Planned> {
    let mut r = seed::rng(corpus_seed, &format!("plan-{split}"), 0);
    let mut speech_plans = Vec::with_capacity(count);
    for i in 0..count {
        let speaker = r.random_range(0..config.speakers);
        let words = if i < nonspeech {
            Vec::new()
        } else {
            let len = r.random_range(config.min_words..=config.max_words);
            grammar.sentence(len, &mut r)
        };
        let plan = synth::plan_words(lexicon, &words, &config.phones, &mut r);
        speech_plans.push((speaker, words, plan));
    }

    // Calibrate: total non-speech = ratio x total speech, spread unevenly.
    let speech_total: usize = speech_plans.iter().map(|p| p.2.frames()).sum();
    let target = (config.target_ratio * speech_total as f64).round() as usize;
    let mut pure: Vec<usize> = (0..nonspeech).map(|_| r.random_range(40..=160)).collect();
    let pure_sum: usize = pure.iter().sum();
    let cap = if count > nonspeech { target / 2 } else { target };
    if pure_sum > cap && pure_sum > 0 {
        for p in pure.iter_mut() {
            *p = (*p * cap / pure_sum).max(1);
        }
    }
    let remaining = target.saturating_sub(pure.iter().sum());
    let speakers_with_speech = count - nonspeech;
    let weights: Vec<f64> = (0..speakers_with_speech)
        .map(|_| {
            // log-normal spread, so per-utterance std exceeds the mean
            let z: f64 = (0..6).map(|_| r.random_range(-1.0..1.0)).sum::<f64>() / 2.0_f64.sqrt();
            (0.9 * z).exp()
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mut budgets: Vec<usize> = weights
        .iter()
        .map(|w| (remaining as f64 * w / wsum).floor() as usize)
        .collect();
    let short = remaining - budgets.iter().sum::<usize>();
    for b in budgets.iter_mut().take(short) {
        *b += 1;
    }

    speech_plans
        .into_iter()
        .enumerate()
        .map(|(i, (speaker, words, plan))| {
            let budget = if i < nonspeech {
                pure[i]
            } else {
                budgets[i - nonspeech]
            };
            let mut lr = seed::rng(corpus_seed, &format!("layout-{split}"), i as u64);
            Planned {
                id: format!("{}{:04}", split.prefix(), i),
                split,
                speaker,
                words,
                runs: synth::layout(&plan, budget, &mut lr),
            }
        })
        .collect()
}

/// Builds the corpus; a pure function of (config, seed).
pub fn generate_corpus(config: &CorpusConfig, corpus_seed: u64) -> Result<GeneratedCorpus> {
    config.validate()?;
    let frontend = FrontendConfig {
        sample_rate: config.sample_rate,
        ..FrontendConfig::default()
    };
    let lexicon: Vec<Vec<usize>> = config.lexicon()?.into_iter().map(|(_, p)| p).collect();
    let grammar = Grammar::draw(config.vocabulary.len(), config.successors, corpus_seed);
    let n_nonspeech = (config.transcribed as f64 * config.nonspeech_fraction).round() as usize;

    let mut planned = Vec::new();
    for (split, count, ns) in [
        (Split::TranscribedTrain, config.transcribed, n_nonspeech),
        (Split::UntranscribedTrain, config.untranscribed, 0),
        (Split::Dev, config.dev, 0),
        (Split::Eval, config.eval, 0),
    ] {
        planned.extend(plan_split(config, &lexicon, &grammar, split, count, ns, corpus_seed));
    }

    let speakers: Vec<Speaker> = (0..config.speakers)
        .map(|i| Speaker::draw(corpus_seed, i))
        .collect();
    let utterances: Vec<SyntheticUtterance> = planned
        .par_iter()
        .map(|p| {
            let utt_seed = seed::derive_str(corpus_seed, "utterance", &p.id);
            SyntheticUtterance {
                utterance_id: p.id.clone(),
                waveform: synth::render(&p.runs, &speakers[p.speaker], config, &frontend, utt_seed),
                transcript: p.words.iter().map(|&w| config.vocabulary[w].clone()).collect(),
                true_alignment: synth::alignment(&p.runs),
                speaker_id: format!("spk{:02}", p.speaker),
            }
        })
        .collect();

    let entries = planned
        .iter()
        .zip(&utterances)
        .map(|(p, u)| ManifestEntry {
            id: p.id.clone(),
            audio: PathBuf::from(format!("wav/{}.wav", p.id)),
            transcript: if p.split == Split::UntranscribedTrain {
                Vec::new()
            } else {
                u.transcript.clone()
            },
            alignment: PathBuf::from(format!("ali/{}.ali", p.id)),
            split: p.split,
        })
        .collect();

    let mut tr = seed::rng(corpus_seed, "written", 0);
    let written_text = (0..config.written_sentences)
        .map(|_| {
            let len = tr.random_range(config.min_words..=config.max_words);
            grammar
                .sentence(len, &mut tr)
                .into_iter()
                .map(|w| config.vocabulary[w].clone())
                .collect()
        })
        .collect();

    Ok(GeneratedCorpus {
        config: config.clone(),
        manifest: CorpusManifest {
            entries,
            seed: corpus_seed,
            digest: config.digest(corpus_seed),
        },
        utterances,
        written_text,
    })
}

/// Synthesises one utterance with a non-speech budget of
/// `target_ratio` x its speech frames.
pub fn synth_utterance(
    config: &CorpusConfig,
    words: &[String],
    utt_seed: u64,
) -> Result<SyntheticUtterance> {
    let lexicon = config.lexicon()?;
    let ids = words
        .iter()
        .map(|w| {
            lexicon
                .iter()
                .position(|(lw, _)| lw == w)
                .ok_or_else(|| Error::UnknownWord(w.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let spellings: Vec<Vec<usize>> = lexicon.into_iter().map(|(_, p)| p).collect();
    let mut r = seed::rng(utt_seed, "single", 0);
    let plan = synth::plan_words(&spellings, &ids, &config.phones, &mut r);
    let speech = plan.frames();
    let budget = if speech == 0 {
        r.random_range(40..=160)
    } else {
        (config.target_ratio * speech as f64).round() as usize
    };
    let runs = synth::layout(&plan, budget, &mut r);
    let frontend = FrontendConfig {
        sample_rate: config.sample_rate,
        ..FrontendConfig::default()
    };
    let speaker = Speaker::draw(utt_seed, 0);
    Ok(SyntheticUtterance {
        utterance_id: format!("single-{utt_seed}"),
        waveform: synth::render(&runs, &speaker, config, &frontend, utt_seed),
        transcript: words.to_vec(),
        true_alignment: synth::alignment(&runs),
        speaker_id: "spk00".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassStats {
    pub total: usize,
    pub mean: f64,
    /// Population standard deviation over utterances.
    pub std: f64,
}

/// Per-class frame statistics over utterances.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDurationStats {
    pub nonspeech: ClassStats,
    pub speech: ClassStats,
}

impl StateDurationStats {
    pub fn from_alignments<'a, I>(alignments: I, inventory: &StateInventory) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [StateId]>,
    {
        let mut ns = Vec::new();
        let mut sp = Vec::new();
        for ali in alignments {
            let mut counts = (0usize, 0usize);
            for &s in ali {
                inventory.check(s)?;
                if inventory.is_speech(s) {
                    counts.1 += 1;
                } else {
                    counts.0 += 1;
                }
            }
            ns.push(counts.0);
            sp.push(counts.1);
        }
        Ok(Self {
            nonspeech: class_stats(&ns),
            speech: class_stats(&sp),
        })
    }

    /// Total non-speech frames over total speech frames.
    pub fn ratio(&self) -> f64 {
        self.nonspeech.total as f64 / self.speech.total as f64
    }
}

fn class_stats(counts: &[usize]) -> ClassStats {
    if counts.is_empty() {
        return ClassStats::default();
    }
    let n = counts.len() as f64;
    let total: usize = counts.iter().sum();
    let mean = total as f64 / n;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    ClassStats {
        total,
        mean,
        std: var.sqrt(),
    }
}

/// Reads every entry's alignment relative to `root`.
pub fn corpus_stats(
    manifest: &CorpusManifest,
    root: &Path,
    inventory: &StateInventory,
) -> Result<StateDurationStats> {
    let alis = manifest
        .entries
        .iter()
        .map(|e| read_alignment(&root.join(&e.alignment)))
        .collect::<Result<Vec<_>>>()?;
    StateDurationStats::from_alignments(alis.iter().map(Vec::as_slice), inventory)
}

/// Moves empty-transcript transcribed-train entries into a noise pool.
pub fn split_nonspeech_utterances(
    manifest: &CorpusManifest,
) -> (CorpusManifest, Vec<ManifestEntry>) {
    let (pool, kept): (Vec<_>, Vec<_>) = manifest
        .entries
        .iter()
        .cloned()
        .partition(|e| e.split == Split::TranscribedTrain && e.transcript.is_empty());
    (
        CorpusManifest {
            entries: kept,
            seed: manifest.seed,
            digest: manifest.digest.clone(),
        },
        pool,
    )
}
