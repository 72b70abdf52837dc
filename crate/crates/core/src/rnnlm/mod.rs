//! Word-level recurrent language model for second-pass rescoring.

mod rescore;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{
    accumulate, join, log_softmax_rows, num_trainable, scale_trainable, softmax_rows, uniform,
    zeros_like, Checkpoint, Linear, Lstm, LstmTrace, Module, ParamKind, ParameterSet, Sgd,
    SgdConfig, Stage,
};
use crate::seed;

pub use rescore::{grid_search, rescore_nbest, GridResult, RescoreMode};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Word to id map; ids 0, 1, 2 are sentence begin, sentence end, unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const BOS: usize = 0;
    pub const EOS: usize = 1;
    pub const UNK: usize = 2;

    /// Words seen at least `min_count` times, sorted.
    pub fn build(texts: &[Vec<String>], min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for w in texts.iter().flatten() {
            *counts.entry(w.as_str()).or_default() += 1;
        }
        let words = [BOS, EOS, UNK]
            .into_iter()
            .map(str::to_string)
            .chain(
                counts
                    .into_iter()
                    .filter(|&(w, c)| c >= min_count && ![BOS, EOS, UNK].contains(&w))
                    .map(|(w, _)| w.to_string()),
            )
            .collect();
        Self::from_words(words).expect("reserved words first")
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 3 || words[0] != BOS || words[1] != EOS || words[2] != UNK {
            return Err(Error::Config("vocabulary must start with <s> </s> <unk>".into()));
        }
        let index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != words.len() {
            return Err(Error::Config("duplicate vocabulary entry".into()));
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.words.join("\n") + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_words(text.lines().map(str::to_string).collect())
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnLmConfig {
    pub embedding: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_sentences: usize,
    pub sgd: SgdConfig,
    pub lr_decay: f64,
    pub min_count: usize,
    pub heldout_fraction: f64,
}

impl Default for RnnLmConfig {
    fn default() -> Self {
        Self {
            embedding: 256,
            hidden: 128,
            layers: 2,
            epochs: 8,
            batch_sentences: 16,
            sgd: SgdConfig {
                learning_rate: 0.5,
                momentum: 0.9,
                clip_norm: 5.0,
            },
            lr_decay: 0.85,
            min_count: 1,
            heldout_fraction: 0.1,
        }
    }
}

impl RnnLmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("language model sizes must be positive".into()));
        }
        if self.epochs == 0 || self.batch_sentences == 0 || self.min_count == 0 {
            return Err(Error::Config("epochs, batch size and min count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Embedding, stacked LSTMs and a softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLm {
    pub vocab: Vocab,
    pub embedding: Array2<f64>,
    pub layers: Vec<Lstm>,
    pub output: Linear,
}

struct SentenceTrace {
    inputs: Vec<usize>,
    layer_inputs: Vec<Array2<f64>>,
    traces: Vec<LstmTrace>,
    top: Array2<f64>,
}

impl RnnLm {
    pub fn new(vocab: Vocab, config: &RnnLmConfig, rng: &mut seed::Rng) -> Result<Self> {
        config.validate()?;
        let v = vocab.len();
        let embedding = uniform(v, config.embedding, 0.1, rng);
        let mut layers = Vec::with_capacity(config.layers);
        let mut input = config.embedding;
        for _ in 0..config.layers {
            layers.push(Lstm::new(input, config.hidden, rng));
            input = config.hidden;
        }
        Ok(Self {
            output: Linear::new(config.hidden, v, rng),
            vocab,
            embedding,
            layers,
        })
    }

    fn ids(&self, words: &[String]) -> (Vec<usize>, Vec<usize>) {
        let mut inputs = vec![Vocab::BOS];
        inputs.extend(words.iter().map(|w| self.vocab.id(w)));
        let mut targets = inputs[1..].to_vec();
        targets.push(Vocab::EOS);
        (inputs, targets)
    }

    fn run(&self, inputs: &[usize]) -> Result<(Array2<f64>, SentenceTrace)> {
        let mut x = self.embedding.select(Axis(0), inputs);
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut traces = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (h, _, tr) = l.forward(x.view(), false, None)?;
            layer_inputs.push(x);
            traces.push(tr);
            x = h;
        }
        let logits = self.output.forward(x.view())?;
        Ok((
            logits,
            SentenceTrace {
                inputs: inputs.to_vec(),
                layer_inputs,
                traces,
                top: x,
            },
        ))
    }

    /// Next-word distributions after each prefix `<s> w_1 .. w_k`, one row
    /// per position including the final one.
    pub fn next_word_distributions(&self, words: &[String]) -> Result<Array2<f64>> {
        let (inputs, _) = self.ids(words);
        Ok(softmax_rows(self.run(&inputs)?.0.view()))
    }

    /// `Σ log P(w_t | w_<t)` including the sentence-end term.
    pub fn sentence_log_prob(&self, words: &[String]) -> Result<f64> {
        let (inputs, targets) = self.ids(words);
        let lp = log_softmax_rows(self.run(&inputs)?.0.view());
        Ok(targets.iter().enumerate().map(|(t, &y)| lp[[t, y]]).sum())
    }

    /// Negative log likelihood of one sentence and its gradient.
    pub fn sentence_gradient(&self, words: &[String]) -> Result<(f64, usize, RnnLm)> {
        let (inputs, targets) = self.ids(words);
        let (logits, trace) = self.run(&inputs)?;
        let lp = log_softmax_rows(logits.view());
        let mut dz = lp.mapv(f64::exp);
        let mut nll = 0.0;
        for (t, &y) in targets.iter().enumerate() {
            nll -= lp[[t, y]];
            dz[[t, y]] -= 1.0;
        }
        let mut g = zeros_like(self);
        let mut dh = self.output.backward(trace.top.view(), dz.view(), &mut g.output);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            dh = layer.backward(&trace.traces[i], dh.view(), &mut g.layers[i]);
            debug_assert_eq!(dh.nrows(), trace.layer_inputs[i].nrows());
        }
        for (t, &id) in trace.inputs.iter().enumerate() {
            let mut row = g.embedding.row_mut(id);
            row += &dh.row(t);
        }
        Ok((nll, targets.len(), g))
    }

    pub fn to_checkpoint(&self, digest: &str) -> Checkpoint {
        Checkpoint {
            stage: Stage::Rnnlm,
            digest: digest.to_string(),
            params: ParameterSet::of(self),
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: Vocab, config: &RnnLmConfig, digest: &str) -> Result<Self> {
        ckpt.expect_digest(digest)?;
        ckpt.expect_stage(&[Stage::Rnnlm])?;
        let mut m = Self::new(vocab, config, &mut seed::rng(0, "shape", 0))?;
        ckpt.params.restore_into(&mut m)?;
        Ok(m)
    }
}

impl Module for RnnLm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewD<'_, f64>)) {
        f(&join(prefix, "embedding"), ParamKind::Trainable, self.embedding.view().into_dyn());
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, ArrayViewMutD<'_, f64>)) {
        f(&join(prefix, "embedding"), ParamKind::Trainable, self.embedding.view_mut().into_dyn());
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Per-epoch perplexities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LmReport {
    pub train_perplexity: Vec<f64>,
    pub heldout_perplexity: Vec<f64>,
}

pub fn perplexity(lm: &RnnLm, sentences: &[Vec<String>]) -> Result<f64> {
    let (nll, tokens) = sentences
        .par_iter()
        .map(|s| Ok((-lm.sentence_log_prob(s)?, s.len() + 1)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    Ok((nll / tokens as f64).exp())
}

/// Trains on all but a held-out slice (every sentence when there is only
/// one) and reports perplexities after each epoch.
pub fn train_lm(texts: &[Vec<String>], config: &RnnLmConfig, lm_seed: u64) -> Result<(RnnLm, LmReport)> {
    config.validate()?;
    if texts.is_empty() {
        return Err(Error::Config("no text to train the language model on".into()));
    }
    let mut order: Vec<usize> = (0..texts.len()).collect();
    order.shuffle(&mut seed::rng(lm_seed, "lm-split", 0));
    let held = ((texts.len() as f64 * config.heldout_fraction).round() as usize).clamp(1, texts.len());
    let (held_idx, train_idx) = order.split_at(held);
    let heldout: Vec<Vec<String>> = held_idx.iter().map(|&i| texts[i].clone()).collect();
    let train: Vec<Vec<String>> = if train_idx.is_empty() {
        heldout.clone()
    } else {
        train_idx.iter().map(|&i| texts[i].clone()).collect()
    };

    let vocab = Vocab::build(texts, config.min_count);
    let mut lm = RnnLm::new(vocab, config, &mut seed::rng(lm_seed, "lm-init", 0))?;
    let mut opt = Sgd::new(config.sgd.clone(), num_trainable(&lm));
    let mut report = LmReport::default();
    for epoch in 0..config.epochs {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(&mut seed::rng(lm_seed, "lm-shuffle", epoch as u64));
        for batch in idx.chunks(config.batch_sentences) {
            let m = &lm;
            let parts = batch
                .par_iter()
                .map(|&i| m.sentence_gradient(&train[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = zeros_like(&lm);
            let mut tokens = 0;
            for (_, n, g) in &parts {
                accumulate(&mut grads, g);
                tokens += n;
            }
            scale_trainable(&mut grads, 1.0 / tokens as f64);
            if let Err(e) = opt.step(&mut lm, &grads) {
                match e {
                    Error::Numeric(msg) => log::warn!("language model epoch {epoch}: {msg}"),
                    e => return Err(e),
                }
            }
        }
        report.train_perplexity.push(perplexity(&lm, &train)?);
        report.heldout_perplexity.push(perplexity(&lm, &heldout)?);
        log::info!(
            "rnnlm epoch {epoch}: train ppl {:.3}, held-out ppl {:.3}",
            report.train_perplexity[epoch],
            report.heldout_perplexity[epoch]
        );
        opt.config.learning_rate *= config.lr_decay;
    }
    Ok((lm, report))
}
