//! Hybrid HMM decoding: graph construction, Viterbi and n-best search,
//! forced alignment, confidence and WER.

mod graph;
mod io;
mod lm;
mod search;
mod wer;

use serde::{Deserialize, Serialize};

use crate::corpus::{speech_state, CorpusConfig, NONSPEECH_STATES, STATES_PER_PHONE};
use crate::error::{Error, Result};
use crate::inventory::{StateId, StateInventory};

pub use graph::{build_graph, Arc, DecodingGraph, Endpoint, Node, NodeId};
pub use io::{read_nbest, write_nbest, ScoreRow, ScoringReport};
pub use lm::{BigramLm, WordId};
pub use search::{
    acoustic_scores, force_align, nbest_decode, utterance_confidence, viterbi_decode,
    ForcedAlignment, Hypothesis, NBestList,
};
pub use wer::{align_counts, score_wer, WerCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Exponent on the state prior when turning posteriors into scaled
    /// likelihoods.
    pub prior_scale: f64,
    /// Multiplier on first-pass LM log probabilities.
    pub lm_weight: f64,
    /// Added to every word entry.
    pub word_insertion_penalty: f64,
    pub self_loop_prob: f64,
    pub interword_nonspeech: bool,
    pub boundary_nonspeech: bool,
    pub nbest: usize,
    /// Absolute discount of the bigram model.
    pub lm_discount: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            prior_scale: 1.0,
            lm_weight: 4.0,
            word_insertion_penalty: 0.0,
            self_loop_prob: 0.5,
            interword_nonspeech: true,
            boundary_nonspeech: true,
            nbest: 10,
            lm_discount: 0.5,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.self_loop_prob > 0.0 && self.self_loop_prob < 1.0) {
            return Err(Error::Config("self_loop_prob must lie in (0, 1)".into()));
        }
        if !(self.prior_scale >= 0.0 && self.lm_weight >= 0.0) {
            return Err(Error::Config("prior_scale and lm_weight must be >= 0".into()));
        }
        if !self.word_insertion_penalty.is_finite() {
            return Err(Error::Config("word_insertion_penalty must be finite".into()));
        }
        if self.nbest == 0 {
            return Err(Error::Config("nbest must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.lm_discount) {
            return Err(Error::Config("lm_discount must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Word pronunciations as HMM state sequences, plus the states of the
/// non-speech filler `<ns>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    words: Vec<String>,
    pronunciations: Vec<Vec<StateId>>,
    nonspeech: Vec<StateId>,
}

pub const NONSPEECH_WORD: &str = "<ns>";

impl Lexicon {
    pub fn new(entries: Vec<(String, Vec<StateId>)>, nonspeech: Vec<StateId>, inventory: &StateInventory) -> Result<Self> {
        let (words, pronunciations): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let lex = Self {
            words,
            pronunciations,
            nonspeech,
        };
        lex.check(inventory)?;
        Ok(lex)
    }

    /// Three states per phone in the synthetic language.
    pub fn from_corpus(config: &CorpusConfig) -> Result<Self> {
        let entries = config
            .lexicon()?
            .into_iter()
            .map(|(w, phones)| {
                let states = phones
                    .iter()
                    .flat_map(|&p| (0..STATES_PER_PHONE).map(move |k| speech_state(p, k)))
                    .collect();
                (w, states)
            })
            .collect();
        Self::new(entries, (0..NONSPEECH_STATES).collect(), &config.inventory())
    }

    pub fn check(&self, inventory: &StateInventory) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (w, p) in self.words.iter().zip(&self.pronunciations) {
            if w == NONSPEECH_WORD || !seen.insert(w) {
                return Err(Error::Config(format!("word `{w}` is reserved or listed twice")));
            }
            if p.is_empty() {
                return Err(Error::Config(format!("word `{w}` has an empty pronunciation")));
            }
            for &s in p {
                if !inventory.contains(s) || !inventory.is_speech(s) {
                    return Err(Error::Config(format!("word `{w}` uses non-speech or unknown state {s}")));
                }
            }
        }
        if self.nonspeech.is_empty() {
            return Err(Error::Config("no non-speech states".into()));
        }
        for &s in &self.nonspeech {
            if !inventory.contains(s) || inventory.is_speech(s) {
                return Err(Error::Config(format!("state {s} is not a non-speech state")));
            }
        }
        Ok(())
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn pronunciations(&self) -> &[Vec<StateId>] {
        &self.pronunciations
    }

    pub fn nonspeech(&self) -> &[StateId] {
        &self.nonspeech
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentSource {
    True,
    Forced,
    Decoded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub states: Vec<StateId>,
    pub source: AlignmentSource,
}
