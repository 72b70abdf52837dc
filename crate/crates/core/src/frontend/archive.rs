//! Per-utterance feature files: 4-byte magic, u32 version, u32 T, u32 D,
//! f32 frame shift (ms), f32 frame length (ms), then T*D little-endian f32
//! values in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::FeatureSequence;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ALFT";
const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 * 5;

pub fn write_features(path: &Path, f: &FeatureSequence) -> Result<()> {
    let (t, d) = f.frames.dim();
    let mut buf = Vec::with_capacity(HEADER + 4 * t * d);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(f.frame_shift_ms as f32).to_le_bytes());
    buf.extend_from_slice(&(f.frame_length_ms as f32).to_le_bytes());
    for v in f.frames.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < HEADER || &buf[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "not a feature archive"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(Error::format(path, format!("unsupported version {}", word(0))));
    }
    let (t, d) = (word(1) as usize, word(2) as usize);
    let shift = f32::from_bits(word(3));
    let length = f32::from_bits(word(4));
    if buf.len() != HEADER + 4 * t * d {
        return Err(Error::format(path, "truncated feature archive"));
    }
    let values = buf[HEADER..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let frames = Array2::from_shape_vec((t, d), values)
        .map_err(|e| Error::format(path, e.to_string()))?;
    FeatureSequence::new(frames, f64::from(shift), f64::from(length))
}
