//! Second-pass N-best rescoring and the dev-set weight search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RnnLm;
use crate::decoder::{align_counts, NBestList, WerCounts};
use crate::error::{Error, Result};

/// How the recurrent LM score enters the combined score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RescoreMode {
    /// `acoustic + w·rnn`; the first-pass LM term is dropped.
    #[default]
    Replace,
    /// `acoustic + λ·((1 − w)·bigram + w·rnn)` with the first-pass LM weight λ.
    Interpolate,
}

impl RescoreMode {
    pub fn combine(self, acoustic: f64, first_pass_lm: f64, rnn: f64, w: f64, lm_weight: f64) -> f64 {
        match self {
            Self::Replace => acoustic + w * rnn,
            Self::Interpolate => acoustic + lm_weight * ((1.0 - w) * first_pass_lm + w * rnn),
        }
    }
}

fn rnn_scores(list: &NBestList, lm: &RnnLm) -> Result<Vec<f64>> {
    list.hypotheses.iter().map(|h| lm.sentence_log_prob(&h.words)).collect()
}

fn rerank(list: &NBestList, rnn: &[f64], w: f64, mode: RescoreMode, lm_weight: f64) -> NBestList {
    let mut hyps = list.hypotheses.clone();
    for (h, &r) in hyps.iter_mut().zip(rnn) {
        h.score = mode.combine(h.acoustic, h.lm, r, w, lm_weight);
    }
    hyps.sort_by(|a, b| b.score.total_cmp(&a.score));
    NBestList { hypotheses: hyps }
}

/// Re-ranks one list. Hypotheses are kept unchanged apart from `score`,
/// and equal scores keep their first-pass order.
pub fn rescore_nbest(
    list: &NBestList,
    lm: &RnnLm,
    w: f64,
    mode: RescoreMode,
    lm_weight: f64,
) -> Result<NBestList> {
    if !(w >= 0.0) {
        return Err(Error::Config(format!("rescoring weight {w} must be non-negative")));
    }
    Ok(rerank(list, &rnn_scores(list, lm)?, w, mode, lm_weight))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best_weight: f64,
    /// One row per grid weight, in grid order.
    pub table: Vec<(f64, WerCounts)>,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("weight,dev_wer\n");
        for (w, c) in &self.table {
            s.push_str(&format!("{w},{:.4}\n", c.wer()));
        }
        s
    }
}

/// Corpus WER of the top hypotheses after rescoring at each weight.
pub fn grid_search(
    lists: &[NBestList],
    references: &[Vec<String>],
    lm: &RnnLm,
    grid: &[f64],
    mode: RescoreMode,
    lm_weight: f64,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Config("rescoring grid is empty".into()));
    }
    if let Some(w) = grid.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Config(format!("rescoring weight {w} must be non-negative")));
    }
    if lists.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} n-best lists but {} references",
            lists.len(),
            references.len()
        )));
    }
    let rnn = lists.par_iter().map(|l| rnn_scores(l, lm)).collect::<Result<Vec<_>>>()?;
    let mut table = Vec::with_capacity(grid.len());
    for &w in grid {
        let counts: WerCounts = lists
            .iter()
            .zip(&rnn)
            .zip(references)
            .map(|((l, r), reference)| {
                let top = rerank(l, r, w, mode, lm_weight);
                let hyp = top.best().map(|h| h.words.as_slice()).unwrap_or(&[]);
                align_counts(reference, hyp)
            })
            .sum();
        table.push((w, counts));
    }
    let mut best = 0;
    for (i, (w, c)) in table.iter().enumerate() {
        let (bw, bc) = &table[best];
        if c.errors() < bc.errors() || (c.errors() == bc.errors() && w < bw) {
            best = i;
        }
    }
    Ok(GridResult {
        best_weight: table[best].0,
        table,
    })
}
