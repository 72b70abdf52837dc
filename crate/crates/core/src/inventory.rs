//! Partition of HMM output states into non-speech and speech sets.

use crate::error::{Error, Result};

pub type StateId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateInventory {
    s1: Vec<StateId>,
    s2: Vec<StateId>,
    // position of each state inside its own set
    slot: Vec<usize>,
    speech: Vec<bool>,
}

impl StateInventory {
    pub fn new(s1: Vec<StateId>, s2: Vec<StateId>) -> Result<Self> {
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::Contract(
                "state inventory needs non-empty non-speech and speech sets".into(),
            ));
        }
        let total = s1.len() + s2.len();
        let mut slot = vec![usize::MAX; total];
        let mut speech = vec![false; total];
        for (set, is_speech) in [(&s1, false), (&s2, true)] {
            for (i, &id) in set.iter().enumerate() {
                if id >= total {
                    return Err(Error::Contract(format!(
                        "state id {id} outside dense range [0, {total})"
                    )));
                }
                if slot[id] != usize::MAX {
                    return Err(Error::Contract(format!("state id {id} listed twice")));
                }
                slot[id] = i;
                speech[id] = is_speech;
            }
        }
        Ok(Self {
            s1,
            s2,
            slot,
            speech,
        })
    }

    /// Non-speech states first, then speech states.
    pub fn contiguous(n_nonspeech: usize, n_speech: usize) -> Result<Self> {
        Self::new(
            (0..n_nonspeech).collect(),
            (n_nonspeech..n_nonspeech + n_speech).collect(),
        )
    }

    pub fn nonspeech(&self) -> &[StateId] {
        &self.s1
    }

    pub fn speech(&self) -> &[StateId] {
        &self.s2
    }

    pub fn len(&self) -> usize {
        self.slot.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: StateId) -> bool {
        id < self.slot.len()
    }

    pub fn is_speech(&self, id: StateId) -> bool {
        self.speech[id]
    }

    /// Index of `id` within S1 or S2, whichever holds it.
    pub fn slot(&self, id: StateId) -> usize {
        self.slot[id]
    }

    pub fn check(&self, id: StateId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "unknown state id {id} (inventory has {} states)",
                self.len()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_overlap_and_gaps() {
        assert!(StateInventory::new(vec![0, 1], vec![1, 2]).is_err());
        assert!(StateInventory::new(vec![0], vec![5]).is_err());
        assert!(StateInventory::new(vec![], vec![0]).is_err());
    }

    #[test]
    fn interleaved_sets_keep_slots() {
        let inv = StateInventory::new(vec![2, 0], vec![1, 3]).unwrap();
        assert_eq!(inv.slot(0), 1);
        assert_eq!(inv.slot(3), 1);
        assert!(inv.is_speech(1));
        assert!(!inv.is_speech(2));
    }
}
