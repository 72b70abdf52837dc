use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::{FeatureSequence, FrontendConfig, Waveform};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Frequency-axis perturbations applied inside feature extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralWarp {
    /// VTLP factor applied to the filterbank edges.
    pub vtlp_alpha: f64,
    /// Linear rescaling of the spectrum's frequency axis.
    pub pitch_beta: f64,
}

impl Default for SpectralWarp {
    fn default() -> Self {
        Self {
            vtlp_alpha: 1.0,
            pitch_beta: 1.0,
        }
    }
}

const WARP_GUARD: (f64, f64) = (0.8, 1.2);

fn check_guard(name: &str, v: f64) -> Result<()> {
    if !(WARP_GUARD.0..=WARP_GUARD.1).contains(&v) {
        return Err(Error::Parameter(format!(
            "{name} factor {v} outside [{}, {}]",
            WARP_GUARD.0, WARP_GUARD.1
        )));
    }
    Ok(())
}

/// Triangular mel filters stored sparsely as (first bin, weights).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    filters: Vec<(usize, Vec<f64>)>,
    /// Edge frequencies in Hz, `n_mels + 2` of them, after warping.
    edges: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(config: &FrontendConfig, vtlp_alpha: f64) -> Self {
        let lo = hz_to_mel(config.f_min);
        let hi = hz_to_mel(config.upper_edge());
        let n = config.n_mels;
        let nyq = config.nyquist();
        let knee = config.vtlp_knee_hz.min(nyq);
        let warp = |f: f64| {
            if f <= knee {
                vtlp_alpha * f
            } else {
                let top = vtlp_alpha * knee;
                top + (nyq - top) * (f - knee) / (nyq - knee)
            }
        };
        let edges: Vec<f64> = (0..n + 2)
            .map(|i| warp(mel_to_hz(lo + (hi - lo) * i as f64 / (n + 1) as f64)))
            .collect();

        let bins = config.n_fft / 2 + 1;
        let bin_hz = f64::from(config.sample_rate) / config.n_fft as f64;
        let filters = (0..n)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let first = ((l / bin_hz).floor().max(0.0) as usize).min(bins);
                let last = ((r / bin_hz).ceil() as usize).min(bins - 1);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= l || f >= r {
                            0.0
                        } else if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        Self { filters, edges }
    }

    /// Filter center frequencies in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.filters) {
            *o = w
                .iter()
                .zip(&power[*first..])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Rescales the frequency axis: out(k) = in(k / beta), linearly interpolated.
fn warp_spectrum(power: &[f64], beta: f64, out: &mut [f64]) {
    let n = power.len();
    for (k, o) in out.iter_mut().enumerate() {
        let src = k as f64 / beta;
        let i = src.floor() as usize;
        *o = if i + 1 < n {
            let frac = src - i as f64;
            power[i] * (1.0 - frac) + power[i + 1] * frac
        } else if i + 1 == n && src == (n - 1) as f64 {
            power[n - 1]
        } else {
            0.0
        };
    }
}

pub(crate) fn extract_with(
    w: &Waveform,
    config: &FrontendConfig,
    warp: SpectralWarp,
) -> Result<FeatureSequence> {
    if w.sample_rate() != config.sample_rate {
        return Err(Error::Input(format!(
            "waveform rate {} Hz does not match frontend rate {} Hz",
            w.sample_rate(),
            config.sample_rate
        )));
    }
    let win = config.window_samples();
    let shift = config.shift_samples();
    let t = config.num_frames(w.len()).ok_or_else(|| {
        Error::Input(format!(
            "waveform of {} samples is shorter than one {win}-sample window",
            w.len()
        ))
    })?;
    if config.n_fft < win {
        return Err(Error::Config(format!(
            "n_fft {} smaller than window {win}",
            config.n_fft
        )));
    }

    let bank = MelFilterbank::new(config, warp.vtlp_alpha);
    let window = hamming(win);
    let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
    let bins = config.n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); config.n_fft];
    let mut power = vec![0.0; bins];
    let mut warped = vec![0.0; bins];
    let mut frames = Array2::zeros((t, config.n_mels));
    let floor_log = config.log_floor.ln();
    let samples = w.samples();

    for (i, mut row) in frames.rows_mut().into_iter().enumerate() {
        let start = i * shift;
        for (j, c) in buf.iter_mut().enumerate() {
            *c = if j < win {
                Complex::new(samples[start + j] * window[j], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let spectrum = if warp.pitch_beta == 1.0 {
            &power
        } else {
            warp_spectrum(&power, warp.pitch_beta, &mut warped);
            &warped
        };
        let out = row.as_slice_mut().expect("standard layout");
        bank.apply(spectrum, out);
        for v in out.iter_mut() {
            *v = if *v > config.log_floor {
                v.ln()
            } else {
                floor_log
            };
        }
    }
    FeatureSequence::new(frames, config.frame_shift_ms, config.frame_length_ms)
}

/// 80-dim log-mel energies, Hamming window, power spectrum.
pub fn extract_logmel(w: &Waveform, config: &FrontendConfig) -> Result<FeatureSequence> {
    extract_with(w, config, SpectralWarp::default())
}

/// Vocal tract length perturbation: filterbank edges pass through a
/// piecewise-linear warp with slope `alpha` below the knee.
pub fn vtlp_warp(w: &Waveform, config: &FrontendConfig, alpha: f64) -> Result<FeatureSequence> {
    check_guard("VTLP", alpha)?;
    extract_with(
        w,
        config,
        SpectralWarp {
            vtlp_alpha: alpha,
            pitch_beta: 1.0,
        },
    )
}

/// Duration-preserving pitch perturbation realised as a spectral rescale.
pub fn pitch_warp(w: &Waveform, config: &FrontendConfig, beta: f64) -> Result<FeatureSequence> {
    check_guard("pitch", beta)?;
    extract_with(
        w,
        config,
        SpectralWarp {
            vtlp_alpha: 1.0,
            pitch_beta: beta,
        },
    )
}
