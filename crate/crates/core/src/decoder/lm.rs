//! Count-based bigram language model for first-pass decoding.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};

pub type WordId = usize;

/// `P(w' | w)` with absolute discounting, backed off to an add-one unigram.
/// Histories are sentence begin plus every word; targets are every word
/// plus sentence end.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    vocab: Vec<String>,
    index: HashMap<String, WordId>,
    /// Row 0 is the sentence-begin history, row `w + 1` history `w`;
    /// column `V` is sentence end.
    log_prob: Array2<f64>,
}

impl BigramLm {
    pub fn train(vocab: &[String], sentences: &[Vec<String>], discount: f64) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Config("language model vocabulary is empty".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Config(format!("discount {discount} outside [0, 1)")));
        }
        let index: HashMap<String, WordId> =
            vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != vocab.len() {
            return Err(Error::Config("duplicate word in vocabulary".into()));
        }
        let v = vocab.len();
        let mut pair = Array2::<f64>::zeros((v + 1, v + 1));
        let mut uni = vec![0.0; v + 1];
        for s in sentences {
            let mut prev = 0;
            for w in s {
                let id = *index.get(w).ok_or_else(|| Error::UnknownWord(w.clone()))?;
                pair[[prev, id]] += 1.0;
                uni[id] += 1.0;
                prev = id + 1;
            }
            pair[[prev, v]] += 1.0;
            uni[v] += 1.0;
        }
        let total: f64 = uni.iter().sum();
        let unigram: Vec<f64> = uni.iter().map(|c| (c + 1.0) / (total + (v + 1) as f64)).collect();
        let mut log_prob = Array2::zeros((v + 1, v + 1));
        for h in 0..=v {
            let row = pair.row(h);
            let count: f64 = row.sum();
            for t in 0..=v {
                let p = if count == 0.0 {
                    unigram[t]
                } else {
                    let seen = row.iter().filter(|&&c| c > 0.0).count() as f64;
                    (row[t] - discount).max(0.0) / count + discount * seen / count * unigram[t]
                };
                log_prob[[h, t]] = p.ln();
            }
        }
        Ok(Self {
            vocab: vocab.to_vec(),
            index,
            log_prob,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    /// `log P(next | prev)`; `None` stands for sentence begin resp. end.
    pub fn log_p(&self, prev: Option<WordId>, next: Option<WordId>) -> f64 {
        let h = prev.map_or(0, |w| w + 1);
        let t = next.unwrap_or(self.vocab.len());
        self.log_prob[[h, t]]
    }

    pub fn sentence_log_prob(&self, words: &[String]) -> Result<f64> {
        let mut prev = None;
        let mut sum = 0.0;
        for w in words {
            let id = self.id(w).ok_or_else(|| Error::UnknownWord(w.clone()))?;
            sum += self.log_p(prev, Some(id));
            prev = Some(id);
        }
        Ok(sum + self.log_p(prev, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn distributions_normalise() {
        let vocab = words("a b c d");
        let lm = BigramLm::train(&vocab, &[words("a b c"), words("a b"), words(""), words("d d d a")], 0.5).unwrap();
        for h in std::iter::once(None).chain((0..4).map(Some)) {
            let s: f64 = (0..4).map(|w| lm.log_p(h, Some(w)).exp()).sum::<f64>() + lm.log_p(h, None).exp();
            assert!((s - 1.0).abs() < 1e-9, "{h:?}: {s}");
        }
        assert!(lm.log_p(Some(0), Some(1)) > lm.log_p(Some(0), Some(2)));
    }

    #[test]
    fn hand_computed_probabilities() {
        // counts: <s>a 1, ab 1, b</s> 1; unigram over {a, b, </s>} with add-one
        let vocab = words("a b");
        let lm = BigramLm::train(&vocab, &[words("a b")], 0.5).unwrap();
        let u: [f64; 3] = [2.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0];
        let p_ab: f64 = 0.5 + 0.5 * u[1];
        assert!((lm.log_p(Some(0), Some(1)) - p_ab.ln()).abs() < 1e-12);
        assert!((lm.log_p(Some(0), None) - (0.5 * u[2]).ln()).abs() < 1e-12);
        let expected = (0.5 + 0.5 * u[0]).ln() + p_ab.ln() + (0.5 + 0.5 * u[2]).ln();
        assert!((lm.sentence_log_prob(&words("a b")).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let vocab = words("a");
        assert!(matches!(BigramLm::train(&vocab, &[words("z")], 0.5), Err(Error::UnknownWord(_))));
        assert!(BigramLm::train(&[], &[], 0.5).is_err());
        assert!(BigramLm::train(&vocab, &[], 1.5).is_err());
    }
}
