use std::ops::Range;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{FeatureSequence, BASE_DIM, PAIRED_DIM};
use crate::error::{Error, Result};

/// Appends the following frame to each frame; the last frame is paired
/// with itself.
pub fn pair_frames(f: &FeatureSequence) -> Result<FeatureSequence> {
    if f.dim() != BASE_DIM {
        return Err(Error::Contract(format!(
            "pair_frames expects {BASE_DIM}-dim input, got {}",
            f.dim()
        )));
    }
    let t = f.num_frames();
    let mut out = Array2::zeros((t, PAIRED_DIM));
    out.slice_mut(s![.., ..BASE_DIM]).assign(&f.frames);
    if t > 1 {
        out.slice_mut(s![..t - 1, BASE_DIM..])
            .assign(&f.frames.slice(s![1.., ..]));
    }
    out.slice_mut(s![t - 1, BASE_DIM..])
        .assign(&f.frames.row(t - 1));
    FeatureSequence::new(out, f.frame_shift_ms, f.frame_length_ms)
}

/// Inverse of [`pair_frames`]: the first 80 columns.
pub fn unpair_frames(f: &FeatureSequence) -> Result<FeatureSequence> {
    if f.dim() != PAIRED_DIM {
        return Err(Error::Contract(format!(
            "unpair_frames expects {PAIRED_DIM}-dim input, got {}",
            f.dim()
        )));
    }
    FeatureSequence::new(
        f.frames.slice(s![.., ..BASE_DIM]).to_owned(),
        f.frame_shift_ms,
        f.frame_length_ms,
    )
}

/// Per-utterance mean subtraction.
pub fn normalize_mean(f: &mut FeatureSequence) {
    let mean = f.frames.mean_axis(Axis(0)).expect("T >= 1");
    f.frames -= &mean;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkSpec {
    pub core_length: usize,
    pub context_length: usize,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        Self {
            core_length: 300,
            context_length: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub utterance: String,
    pub core: Range<usize>,
    pub left_context: Range<usize>,
    pub right_context: Range<usize>,
}

impl Chunk {
    /// All frames the network sees for this chunk.
    pub fn span(&self) -> Range<usize> {
        self.left_context.start..self.right_context.end
    }

    /// True on core frames, false on context frames (no loss there).
    pub fn loss_mask(&self) -> Vec<bool> {
        self.span().map(|t| self.core.contains(&t)).collect()
    }
}

pub fn chunk_sequence(utterance: &str, num_frames: usize, spec: ChunkSpec) -> Result<Vec<Chunk>> {
    if num_frames == 0 {
        return Err(Error::Contract("cannot chunk an empty sequence".into()));
    }
    if spec.core_length == 0 {
        return Err(Error::Config("chunk core length must be positive".into()));
    }
    let chunks = (0..num_frames)
        .step_by(spec.core_length)
        .map(|start| {
            let end = (start + spec.core_length).min(num_frames);
            Chunk {
                utterance: utterance.to_string(),
                core: start..end,
                left_context: start.saturating_sub(spec.context_length)..start,
                right_context: end..(end + spec.context_length).min(num_frames),
            }
        })
        .collect();
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(t: usize) -> FeatureSequence {
        let frames = Array2::from_shape_fn((t, BASE_DIM), |(i, j)| (i * 100 + j) as f64);
        FeatureSequence::new(frames, 10.0, 25.0).unwrap()
    }

    #[test]
    fn pairing_repeats_the_last_frame() {
        let p = pair_frames(&seq(3)).unwrap();
        assert_eq!(p.frames.dim(), (3, 160));
        let last = p.frames.row(2);
        assert_eq!(last.slice(s![..80]), last.slice(s![80..]));
        for t in 0..2 {
            assert_eq!(p.frames.slice(s![t, 80..]), seq(3).frames.row(t + 1));
        }
        assert!(pair_frames(&p).is_err());
    }

    #[test]
    fn constant_input_pairs_to_constant_rows() {
        let f = FeatureSequence::new(Array2::from_elem((4, 80), 2.5), 10.0, 25.0).unwrap();
        assert!(pair_frames(&f).unwrap().frames.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn chunk_layout_for_650_frames() {
        let c = chunk_sequence("u", 650, ChunkSpec::default()).unwrap();
        let cores: Vec<_> = c.iter().map(|c| c.core.clone()).collect();
        assert_eq!(cores, vec![0..300, 300..600, 600..650]);
        assert_eq!(c[1].left_context, 290..300);
        assert_eq!(c[1].right_context, 600..610);
        assert!(c[0].left_context.is_empty());
        assert!(c[2].right_context.is_empty());
    }

    #[test]
    fn short_sequences_are_one_chunk() {
        let c = chunk_sequence("u", 100, ChunkSpec::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].core, 0..100);
        assert!(c[0].left_context.is_empty() && c[0].right_context.is_empty());
    }

    proptest! {
        #[test]
        fn cores_tile_and_masks_exclude_context(t in 1usize..2000, core in 1usize..400, ctx in 0usize..30) {
            let chunks = chunk_sequence("u", t, ChunkSpec { core_length: core, context_length: ctx }).unwrap();
            let tiled: Vec<usize> = chunks.iter().flat_map(|c| c.core.clone()).collect();
            prop_assert_eq!(tiled, (0..t).collect::<Vec<_>>());
            for c in &chunks {
                let mask = c.loss_mask();
                let masked = mask.iter().filter(|&&m| m).count();
                prop_assert_eq!(masked, c.core.len());
                prop_assert_eq!(mask.len() - masked, c.left_context.len() + c.right_context.len());
                prop_assert!(c.span().end <= t);
            }
        }

        #[test]
        fn unpairing_recovers_input(t in 1usize..20) {
            let f = seq(t);
            let back = unpair_frames(&pair_frames(&f).unwrap()).unwrap();
            prop_assert_eq!(back.frames, f.frames);
        }
    }
}
