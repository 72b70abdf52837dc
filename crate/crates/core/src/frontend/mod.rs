//! Waveform to feature conversion, augmentation transforms and chunking.

mod archive;
mod augment;
mod chunk;
mod logmel;
mod perturb;

pub use archive::{read_features, write_features, FEATURE_MAGIC};
pub use augment::{
    apply_augmentation, AugmentItem, AugmentationSpec, AugmentedEntry, NoisePool, Perturbation,
    TransformKind,
};
pub use chunk::{chunk_sequence, normalize_mean, pair_frames, unpair_frames, Chunk, ChunkSpec};
pub use logmel::{
    extract_logmel, hz_to_mel, mel_to_hz, pitch_warp, vtlp_warp, MelFilterbank, SpectralWarp,
};
pub use perturb::{
    mix_noise, noise_gain, speed_perturb, volume_perturb, Mixed, NoiseMode, SPEED_FACTORS,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BASE_DIM: usize = 80;
pub const PAIRED_DIM: usize = 160;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub(crate) fn from_trusted(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_square(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Writes 16-bit little-endian mono PCM in a RIFF container.
    pub fn write_wav(&self, path: &std::path::Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let wrap = |e: hound::Error| Error::format(path, e.to_string());
        let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
        for &s in &self.samples {
            w.write_sample(quantize(s)).map_err(wrap)?;
        }
        w.finalize().map_err(wrap)
    }

    pub fn read_wav(path: &std::path::Path) -> Result<Self> {
        let wrap = |e: hound::Error| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        };
        let mut r = hound::WavReader::open(path).map_err(wrap)?;
        let spec = r.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 {
            return Err(Error::format(path, "expected 16-bit mono PCM"));
        }
        let samples = r
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wrap)?;
        Waveform::new(samples, spec.sample_rate)
    }

    /// Round-trips through 16-bit quantization, i.e. what reading the
    /// written file back would give.
    pub fn quantized(&self) -> Self {
        Self::from_trusted(
            self.samples
                .iter()
                .map(|&s| f64::from(quantize(s)) / 32768.0)
                .collect(),
            self.sample_rate,
        )
    }
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>, frame_shift_ms: f64, frame_length_ms: f64) -> Result<Self> {
        let (t, d) = frames.dim();
        if t == 0 {
            return Err(Error::Contract("feature sequence needs at least one frame".into()));
        }
        if d != BASE_DIM && d != PAIRED_DIM {
            return Err(Error::Contract(format!(
                "feature dimension {d} not in {{{BASE_DIM}, {PAIRED_DIM}}}"
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(Self {
            frames,
            frame_shift_ms,
            frame_length_ms,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    /// Upper filterbank edge; Nyquist when unset.
    pub f_max: Option<f64>,
    pub log_floor: f64,
    pub vtlp_knee_hz: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_fft: 512,
            n_mels: BASE_DIM,
            f_min: 20.0,
            f_max: None,
            log_floor: 1e-10,
            vtlp_knee_hz: 4_800.0,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn nyquist(&self) -> f64 {
        f64::from(self.sample_rate) / 2.0
    }

    pub fn upper_edge(&self) -> f64 {
        self.f_max.unwrap_or_else(|| self.nyquist())
    }

    /// T = 1 + floor((N - window) / shift); `None` when N < window.
    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        let win = self.window_samples();
        (num_samples >= win).then(|| 1 + (num_samples - win) / self.shift_samples())
    }

    /// Smallest sample count that yields `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        assert!(frames >= 1);
        (frames - 1) * self.shift_samples() + self.window_samples()
    }
}
