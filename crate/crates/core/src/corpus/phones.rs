//! Default toy-language inventory: five vowels and five consonants with
//! formant-sum acoustics, and CVC words over them.

use serde::{Deserialize, Serialize};

/// Acoustic description of one phone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneSpec {
    pub symbol: String,
    /// (frequency in Hz, amplitude in [0, 1])
    pub formants: Vec<(f64, f64)>,
    pub noise_floor: f64,
    /// Frames; at least one per HMM state.
    pub mean_duration: f64,
    pub duration_jitter: f64,
    /// Relative formant movement across the phone, so the three HMM
    /// states of a phone are spectrally distinct.
    pub glide: f64,
}

fn phone(symbol: &str, formants: &[(f64, f64)], noise: f64, dur: f64, glide: f64) -> PhoneSpec {
    PhoneSpec {
        symbol: symbol.to_string(),
        formants: formants.to_vec(),
        noise_floor: noise,
        mean_duration: dur,
        duration_jitter: 2.0,
        glide,
    }
}

pub fn default_phones() -> Vec<PhoneSpec> {
    vec![
        phone("a", &[(730.0, 0.6), (1090.0, 0.4), (2440.0, 0.15)], 0.01, 8.0, 0.12),
        phone("e", &[(530.0, 0.6), (1840.0, 0.4), (2480.0, 0.15)], 0.01, 8.0, -0.12),
        phone("i", &[(270.0, 0.6), (2290.0, 0.4), (3010.0, 0.15)], 0.01, 7.0, 0.1),
        phone("o", &[(570.0, 0.6), (840.0, 0.4), (2410.0, 0.15)], 0.01, 8.0, -0.1),
        phone("u", &[(300.0, 0.6), (870.0, 0.4), (2240.0, 0.15)], 0.01, 7.0, 0.12),
        phone("m", &[(250.0, 0.5), (1200.0, 0.12)], 0.01, 6.0, 0.08),
        phone("n", &[(250.0, 0.5), (1700.0, 0.12)], 0.01, 6.0, -0.08),
        phone("s", &[(5000.0, 0.1), (6500.0, 0.1)], 0.3, 7.0, 0.05),
        phone("t", &[(3500.0, 0.2), (4500.0, 0.12)], 0.2, 5.0, -0.15),
        phone("k", &[(1800.0, 0.25), (3000.0, 0.12)], 0.15, 5.0, 0.15),
    ]
}

pub fn default_vocabulary() -> Vec<String> {
    [
        "mat", "sen", "kim", "tok", "nus", "sam", "ket", "sik", "mos", "tun", "kas", "men", "tis",
        "nok", "sut", "kan", "tem", "mik", "son", "nut", "tas", "kes", "nim", "mok",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Splits a word into phone symbols greedily by longest match.
pub fn spell(word: &str, phones: &[PhoneSpec]) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut rest = word;
    while !rest.is_empty() {
        let (idx, len) = phones
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.symbol.is_empty() && rest.starts_with(p.symbol.as_str()))
            .map(|(i, p)| (i, p.symbol.len()))
            .max_by_key(|&(_, l)| l)?;
        out.push(idx);
        rest = &rest[len..];
    }
    (!out.is_empty()).then_some(out)
}
