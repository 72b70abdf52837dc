//! First-pass recognition with a trained acoustic model.

use ndarray::Array2;
use rayon::prelude::*;

use crate::decoder::{
    acoustic_scores, align_counts, force_align, nbest_decode, utterance_confidence, Alignment,
    AlignmentSource, DecodeConfig, DecodingGraph, NBestList, WerCounts,
};
use crate::error::{Error, Result};
use crate::model::AcousticModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub id: String,
    /// Best first; never empty.
    pub nbest: NBestList,
    /// Geometric-mean posterior along the best path.
    pub confidence: f64,
}

impl Decoded {
    pub fn words(&self) -> &[String] {
        &self.nbest.hypotheses[0].words
    }

    pub fn alignment(&self) -> Alignment {
        Alignment {
            states: self.nbest.hypotheses[0].alignment.clone(),
            source: AlignmentSource::Decoded,
        }
    }
}

/// An acoustic model bound to a decoding graph.
#[derive(Clone, Copy)]
pub struct Recognizer<'a> {
    pub model: &'a AcousticModel,
    pub graph: &'a DecodingGraph,
    pub config: &'a DecodeConfig,
}

impl<'a> Recognizer<'a> {
    pub fn new(model: &'a AcousticModel, graph: &'a DecodingGraph, config: &'a DecodeConfig) -> Self {
        Self { model, graph, config }
    }

    fn scores(&self, features: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let log_post = self.model.log_posteriors(features.view())?;
        let sc = acoustic_scores(log_post.view(), self.model.log_prior.view(), self.config.prior_scale)?;
        Ok((log_post, sc))
    }

    /// Top `n` hypotheses and the confidence of the best one.
    pub fn decode(&self, id: &str, features: &Array2<f64>, n: usize) -> Result<Decoded> {
        let (log_post, sc) = self.scores(features)?;
        let nbest = nbest_decode(self.graph, sc.view(), n, self.config)?;
        let best = nbest
            .best()
            .ok_or(Error::DecodeFailure { frames: features.nrows() })?;
        let confidence = utterance_confidence(&best.alignment, log_post.view())?;
        Ok(Decoded {
            id: id.to_string(),
            nbest,
            confidence,
        })
    }

    /// Decodes in parallel; results stay in input order.
    pub fn decode_all<'b, I>(&self, items: I, n: usize) -> Vec<Result<Decoded>>
    where
        I: IntoParallelIterator<Item = (&'b str, &'b Array2<f64>)>,
        I::Iter: IndexedParallelIterator,
    {
        items
            .into_par_iter()
            .map(|(id, f)| self.decode(id, f, n))
            .collect()
    }

    /// State sequence of the best path that spells `words`.
    pub fn force_align(&self, features: &Array2<f64>, words: &[String]) -> Result<Alignment> {
        let (_, sc) = self.scores(features)?;
        Ok(force_align(self.graph, words, sc.view(), self.config)?.alignment)
    }

    /// Corpus error counts of the single best hypotheses. Utterances that
    /// fail to decode count as all-deleted.
    pub fn score(&self, items: &[(&str, &Array2<f64>)], references: &[Vec<String>]) -> Result<WerCounts> {
        if items.len() != references.len() {
            return Err(Error::Contract("one reference per utterance".into()));
        }
        let decoded = self.decode_all(items.par_iter().copied(), 1);
        let mut total = WerCounts::default();
        for (d, r) in decoded.into_iter().zip(references) {
            total += match d {
                Ok(d) => align_counts(r, d.words()),
                Err(Error::DecodeFailure { .. }) => align_counts(r, &[] as &[String]),
                Err(e) => return Err(e),
            };
        }
        Ok(total)
    }
}

/// Utterances with reference transcripts, ready to decode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSet {
    pub ids: Vec<String>,
    pub features: Vec<Array2<f64>>,
    pub references: Vec<Vec<String>>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn items(&self) -> Vec<(&str, &Array2<f64>)> {
        self.ids.iter().map(String::as_str).zip(&self.features).collect()
    }
}

impl Recognizer<'_> {
    pub fn score_set(&self, set: &EvalSet) -> Result<WerCounts> {
        self.score(&set.items(), &set.references)
    }
}
