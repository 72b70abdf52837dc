use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

pub const SPEED_FACTORS: [f64; 3] = [0.9, 1.0, 1.1];

const SINC_ZEROS: f64 = 16.0;

/// Resamples so that the signal plays `factor` times faster at the
/// original rate. Output has round(N / factor) samples.
pub fn speed_perturb(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Parameter(format!("speed factor {factor} must be positive")));
    }
    if factor == 1.0 {
        return Ok(w.clone());
    }
    let x = w.samples();
    let n = x.len();
    let m = (n as f64 / factor).round() as usize;
    // Cutoff relative to the input Nyquist; downsampling needs anti-aliasing.
    let cutoff = (1.0 / factor).min(1.0);
    let half = SINC_ZEROS / cutoff;
    let out = (0..m)
        .map(|j| {
            let pos = j as f64 * factor;
            let lo = (pos - half).ceil().max(0.0) as usize;
            let hi = ((pos + half).floor() as usize).min(n.saturating_sub(1));
            (lo..=hi)
                .map(|i| {
                    let d = pos - i as f64;
                    let arg = PI * cutoff * d;
                    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                    let win = 0.5 + 0.5 * (PI * d / half).cos();
                    x[i] * cutoff * sinc * win
                })
                .sum::<f64>()
                .clamp(-1.0, 1.0)
        })
        .collect();
    Ok(Waveform::from_trusted(out, w.sample_rate()))
}

/// Scales by `gain` and hard-clips to [-1, 1].
pub fn volume_perturb(w: &Waveform, gain: f64) -> Result<Waveform> {
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::Parameter(format!("volume gain {gain} must be positive")));
    }
    Ok(Waveform::from_trusted(
        w.samples().iter().map(|s| (s * gain).clamp(-1.0, 1.0)).collect(),
        w.sample_rate(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Noise laid over a random stretch covering at most half the signal.
    Foreground,
    /// Noise tiled over the whole signal.
    Background,
}

/// Gain that puts noise of power `p_noise` at `snr_db` below `p_signal`.
pub fn noise_gain(p_signal: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

#[derive(Debug, Clone)]
pub struct Mixed {
    pub waveform: Waveform,
    pub region: Range<usize>,
    pub gain: f64,
}

pub fn mix_noise<R: Rng>(
    w: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<Mixed> {
    if w.sample_rate() != noise.sample_rate() {
        return Err(Error::Parameter(format!(
            "noise rate {} Hz differs from signal rate {} Hz",
            noise.sample_rate(),
            w.sample_rate()
        )));
    }
    if noise.is_empty() || noise.samples().iter().all(|&s| s == 0.0) {
        return Err(Error::Parameter("noise source is silent".into()));
    }
    let n = w.len();
    let ns = noise.samples();
    let (region, offset) = match mode {
        NoiseMode::Background => (0..n, rng.random_range(0..ns.len())),
        NoiseMode::Foreground => {
            let len = ns.len().min(n / 2).max(1).min(n);
            let start = rng.random_range(0..=n - len);
            let offset = rng.random_range(0..=ns.len() - len);
            (start..start + len, offset)
        }
    };
    let segment: Vec<f64> = (0..region.len())
        .map(|i| ns[(offset + i) % ns.len()])
        .collect();
    let x = w.samples();
    let p_signal = x[region.clone()].iter().map(|s| s * s).sum::<f64>() / region.len().max(1) as f64;
    let p_noise = segment.iter().map(|s| s * s).sum::<f64>() / segment.len().max(1) as f64;
    if p_noise == 0.0 {
        return Err(Error::Parameter("selected noise segment is silent".into()));
    }
    let gain = noise_gain(p_signal, p_noise, snr_db);
    let mut out = x.to_vec();
    for (o, s) in out[region.clone()].iter_mut().zip(&segment) {
        *o = (*o + gain * s).clamp(-1.0, 1.0);
    }
    Ok(Mixed {
        waveform: Waveform::from_trusted(out, w.sample_rate()),
        region,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::FrontendConfig;
    use crate::seed;

    fn noise_like(n: usize, amp: f64, k: u64) -> Waveform {
        let mut r = seed::rng(k, "test-noise", 0);
        Waveform::new((0..n).map(|_| amp * (r.random::<f64>() * 2.0 - 1.0)).collect(), 16_000)
            .unwrap()
    }

    #[test]
    fn speed_lengths() {
        let w = noise_like(16_000, 0.1, 1);
        assert_eq!(speed_perturb(&w, 1.1).unwrap().len(), 14_545);
        assert_eq!(speed_perturb(&w, 1.0).unwrap(), w);
        assert!(speed_perturb(&w, 0.0).is_err());
        assert!(speed_perturb(&w, -1.0).is_err());
    }

    #[test]
    fn slowed_audio_gains_frames() {
        let cfg = FrontendConfig::default();
        let w = noise_like(12_345, 0.1, 2);
        let t = cfg.num_frames(w.len()).unwrap() as f64;
        let slow = speed_perturb(&w, 0.9).unwrap();
        // oracle: frame formula on round(N / 0.9)
        let n_slow = (12_345f64 / 0.9).round() as usize;
        assert_eq!(slow.len(), n_slow);
        let t_slow = (1 + (n_slow - 400) / 160) as f64;
        assert!((t_slow - t / 0.9).abs() <= 1.0);
        assert_eq!(cfg.num_frames(slow.len()).unwrap() as f64, t_slow);
    }

    #[test]
    fn resampled_tone_keeps_its_shape() {
        // 200 Hz tone sped up by 1.1 is a 220 Hz tone.
        let sr = 16_000.0;
        let w = Waveform::new(
            (0..8000).map(|i| 0.5 * (2.0 * PI * 200.0 * i as f64 / sr).sin()).collect(),
            16_000,
        )
        .unwrap();
        let fast = speed_perturb(&w, 1.1).unwrap();
        for j in 200..fast.len() - 200 {
            let expect = 0.5 * (2.0 * PI * 220.0 * j as f64 / sr).sin();
            assert!((fast.samples()[j] - expect).abs() < 1e-3, "sample {j}");
        }
    }

    #[test]
    fn volume_rules() {
        let w = Waveform::new(vec![0.3, -0.6, 0.1], 16_000).unwrap();
        assert_eq!(volume_perturb(&w, 1.0).unwrap(), w);
        assert_eq!(volume_perturb(&w, 2.0).unwrap().peak(), 1.0);
        let half = volume_perturb(&w, 0.5).unwrap();
        assert!((half.mean_square().sqrt() - 0.5 * w.mean_square().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gain_formula() {
        assert_eq!(noise_gain(0.3, 0.3, 0.0), 1.0);
        assert!((noise_gain(0.01, 0.04, 10.0) - 0.025f64.sqrt()).abs() < 1e-12);
        assert!((noise_gain(0.01, 0.04, 10.0) - 0.15811).abs() < 1e-5);
    }

    #[test]
    fn mixed_snr_matches_request() {
        let sig = noise_like(20_000, 0.05, 3);
        let noise = noise_like(7_000, 0.2, 4);
        for (mode, snr, k) in [
            (NoiseMode::Background, 5.0, 0),
            (NoiseMode::Foreground, 12.5, 1),
            (NoiseMode::Foreground, 20.0, 2),
        ] {
            let mut r = seed::rng(9, "mix", k);
            let m = mix_noise(&sig, &noise, snr, mode, &mut r).unwrap();
            if mode == NoiseMode::Foreground {
                assert!(m.region.len() <= sig.len() / 2);
            } else {
                assert_eq!(m.region, 0..sig.len());
            }
            let x = &sig.samples()[m.region.clone()];
            let y = &m.waveform.samples()[m.region.clone()];
            let ps: f64 = x.iter().map(|v| v * v).sum();
            let pn: f64 = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
            let measured = 10.0 * (ps / pn).log10();
            assert!((measured - snr).abs() < 0.1, "{measured} vs {snr}");
            // outside the region nothing changes
            for i in (0..sig.len()).filter(|i| !m.region.contains(i)) {
                assert_eq!(sig.samples()[i], m.waveform.samples()[i]);
            }
        }
    }

    #[test]
    fn silent_noise_is_rejected() {
        let sig = noise_like(1000, 0.1, 5);
        let zero = Waveform::new(vec![0.0; 500], 16_000).unwrap();
        let mut r = seed::rng(0, "x", 0);
        assert!(mix_noise(&sig, &zero, 10.0, NoiseMode::Background, &mut r).is_err());
    }
}
