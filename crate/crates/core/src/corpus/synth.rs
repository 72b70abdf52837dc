use std::f64::consts::PI;

use rand::Rng;

use super::{CorpusConfig, PhoneSpec};
use crate::frontend::{FrontendConfig, Waveform};
use crate::inventory::StateId;
use crate::seed;

/// Non-speech acoustics; each kind is one HMM state in S1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonSpeechKind {
    /// Low-level broadband noise.
    Silence,
    /// Narrowband voiced hum.
    Hesitation,
    /// Amplitude-modulated wideband noise.
    Babble,
}

impl NonSpeechKind {
    pub const ALL: [NonSpeechKind; 3] = [
        NonSpeechKind::Silence,
        NonSpeechKind::Hesitation,
        NonSpeechKind::Babble,
    ];

    pub fn state(self) -> StateId {
        self as usize
    }
}

pub const NONSPEECH_STATES: usize = NonSpeechKind::ALL.len();
pub const STATES_PER_PHONE: usize = 3;

pub fn speech_state(phone: usize, part: usize) -> StateId {
    NONSPEECH_STATES + STATES_PER_PHONE * phone + part
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Run {
    Phone {
        phone: usize,
        parts: [usize; 3],
        /// Position of the word within the utterance.
        word: usize,
    },
    NonSpeech { kind: NonSpeechKind, frames: usize },
}

impl Run {
    fn frames(&self) -> usize {
        match self {
            Run::Phone { parts, .. } => parts.iter().sum(),
            Run::NonSpeech { frames, .. } => *frames,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Speaker {
    pub formant_scale: f64,
    pub f0: f64,
    pub gain: f64,
}

impl Speaker {
    pub fn draw(corpus_seed: u64, index: usize) -> Self {
        let mut r = seed::rng(corpus_seed, "speaker", index as u64);
        Self {
            formant_scale: r.random_range(0.92..1.12),
            f0: r.random_range(110.0..240.0),
            gain: r.random_range(0.6..1.0),
        }
    }
}

/// Word content of one utterance before non-speech is laid out.
#[derive(Debug, Clone)]
pub(crate) struct SpeechPlan {
    pub words: Vec<Vec<Run>>,
}

impl SpeechPlan {
    pub fn frames(&self) -> usize {
        self.words.iter().flatten().map(Run::frames).sum()
    }
}

pub(crate) fn plan_words<R: Rng>(
    lexicon: &[Vec<usize>],
    words: &[usize],
    phones: &[PhoneSpec],
    rng: &mut R,
) -> SpeechPlan {
    let words = words
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            lexicon[w]
                .iter()
                .map(|&p| {
                    let spec = &phones[p];
                    let j = spec.duration_jitter;
                    let d = (spec.mean_duration + rng.random_range(-j..=j))
                        .round()
                        .max(3.0) as usize;
                    let mut parts = [d / 3; 3];
                    for _ in 0..d % 3 {
                        parts[rng.random_range(0..3)] += 1;
                    }
                    Run::Phone {
                        phone: p,
                        parts,
                        word: k,
                    }
                })
                .collect()
        })
        .collect();
    SpeechPlan { words }
}

fn pick_kind<R: Rng>(rng: &mut R) -> NonSpeechKind {
    let u: f64 = rng.random();
    if u < 0.5 {
        NonSpeechKind::Silence
    } else if u < 0.75 {
        NonSpeechKind::Hesitation
    } else {
        NonSpeechKind::Babble
    }
}

fn fill_gap<R: Rng>(frames: usize, rng: &mut R, out: &mut Vec<Run>) {
    if frames == 0 {
        return;
    }
    if frames >= 8 && rng.random_bool(0.4) {
        let cut = rng.random_range(3..=frames - 3);
        let a = pick_kind(rng);
        let mut b = pick_kind(rng);
        if b == a {
            b = NonSpeechKind::Silence;
        }
        out.push(Run::NonSpeech { kind: a, frames: cut });
        out.push(Run::NonSpeech {
            kind: b,
            frames: frames - cut,
        });
    } else {
        out.push(Run::NonSpeech {
            kind: pick_kind(rng),
            frames,
        });
    }
}

/// Lays `budget` non-speech frames around and between the words.
pub(crate) fn layout<R: Rng>(speech: &SpeechPlan, budget: usize, rng: &mut R) -> Vec<Run> {
    let mut runs = Vec::new();
    if speech.words.is_empty() {
        let mut left = budget.max(1);
        let pieces = rng.random_range(1..=3usize).min(left);
        for i in 0..pieces {
            let take = if i + 1 == pieces {
                left
            } else {
                rng.random_range(1..=left - (pieces - i - 1))
            };
            fill_gap(take, rng, &mut runs);
            left -= take;
        }
        return runs;
    }

    let gaps = speech.words.len() + 1;
    let weights: Vec<f64> = (0..gaps)
        .map(|g| {
            if g == 0 || g + 1 == gaps {
                rng.random_range(0.5..1.5)
            } else if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(0.2..1.0)
            }
        })
        .collect();
    let margin = 3.min(budget / 2);
    let spare = budget - 2 * margin;
    let total: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| (spare as f64 * w / total).floor() as usize)
        .collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += margin + (spare - assigned);
    sizes[gaps - 1] += margin;

    for (g, size) in sizes.iter().enumerate() {
        fill_gap(*size, rng, &mut runs);
        if let Some(word) = speech.words.get(g) {
            runs.extend(word.iter().cloned());
        }
    }
    runs
}

pub(crate) fn alignment(runs: &[Run]) -> Vec<StateId> {
    let mut out = Vec::new();
    for run in runs {
        match run {
            Run::Phone { phone, parts, .. } => {
                for (k, &n) in parts.iter().enumerate() {
                    out.extend(std::iter::repeat_n(speech_state(*phone, k), n));
                }
            }
            Run::NonSpeech { kind, frames } => {
                out.extend(std::iter::repeat_n(kind.state(), *frames))
            }
        }
    }
    out
}

/// Renders runs to audio whose frontend frame count equals the number of
/// planned frames. Run boundaries fall halfway between frame centres.
pub(crate) fn render(
    runs: &[Run],
    speaker: &Speaker,
    config: &CorpusConfig,
    frontend: &FrontendConfig,
    utt_seed: u64,
) -> Waveform {
    let frames: usize = runs.iter().map(Run::frames).sum();
    let n = frontend.samples_for_frames(frames);
    let shift = frontend.shift_samples();
    let centre = frontend.window_samples() / 2;
    let boundary = |f: usize| {
        if f == 0 {
            0
        } else if f >= frames {
            n
        } else {
            f * shift + centre - shift / 2
        }
    };
    let sr = f64::from(config.sample_rate);
    let mut rng = seed::rng(utt_seed, "render", 0);
    let background = rng.random_range(config.background_level.0..=config.background_level.1);
    let mut out = vec![0.0; n];
    let mut frame = 0;

    for (r, run) in runs.iter().enumerate() {
        let (lo, hi) = (boundary(frame), boundary(frame + run.frames()));
        frame += run.frames();
        let len = (hi - lo).max(1) as f64;
        let mut noise = seed::rng(utt_seed, "run", r as u64);
        match run {
            Run::Phone { phone, word, .. } => {
                let spec = &config.phones[*phone];
                let (glo, ghi) = config.word_gain_range;
                let word_gain = if glo == ghi {
                    glo
                } else {
                    seed::rng(utt_seed, "word-gain", *word as u64).random_range(glo..=ghi)
                };
                let amp = config.speech_amplitude * speaker.gain * word_gain;
                let mut phase: Vec<f64> = (0..spec.formants.len())
                    .map(|_| noise.random_range(0.0..2.0 * PI))
                    .collect();
                for (i, o) in out[lo..hi].iter_mut().enumerate() {
                    let pos = i as f64 / len;
                    let env = (pos / 0.12).min((1.0 - pos) / 0.12).clamp(0.15, 1.0);
                    let mut v = 0.0;
                    for ((f, a), ph) in spec.formants.iter().zip(phase.iter_mut()) {
                        let f = f * speaker.formant_scale * (1.0 + spec.glide * (pos - 0.5));
                        *ph += 2.0 * PI * f.min(sr / 2.0 - 50.0) / sr;
                        v += a * ph.sin();
                    }
                    v += spec.noise_floor * noise.random_range(-1.0..1.0);
                    *o += amp * env * v;
                }
            }
            Run::NonSpeech { kind, .. } => match kind {
                NonSpeechKind::Silence => {}
                NonSpeechKind::Hesitation => {
                    let amp = config.hesitation_amplitude * speaker.gain;
                    let f0 = speaker.f0 * noise.random_range(0.9..1.1);
                    for (i, o) in out[lo..hi].iter_mut().enumerate() {
                        let t = (lo + i) as f64 / sr;
                        let v: f64 = (1..=4)
                            .map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64)
                            .sum();
                        *o += amp * v;
                    }
                }
                NonSpeechKind::Babble => {
                    let amp = config.babble_amplitude;
                    let rate = noise.random_range(2.0..6.0);
                    for (i, o) in out[lo..hi].iter_mut().enumerate() {
                        let t = (lo + i) as f64 / sr;
                        let am = 0.6 + 0.4 * (2.0 * PI * rate * t).sin();
                        *o += amp * am * noise.random_range(-1.0..1.0);
                    }
                }
            },
        }
    }
    let mut floor = seed::rng(utt_seed, "background", 0);
    for o in out.iter_mut() {
        *o = (*o + background * floor.random_range(-1.0..1.0)).clamp(-1.0, 1.0);
    }
    Waveform::from_trusted(out, config.sample_rate).quantized()
}
