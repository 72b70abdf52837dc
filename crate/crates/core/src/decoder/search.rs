//! Exact dynamic-programming search over a [`DecodingGraph`].

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::graph::{DecodingGraph, NodeId};
use super::lm::WordId;
use super::{Alignment, AlignmentSource, DecodeConfig};
use crate::error::{Error, Result};
use crate::inventory::StateId;

/// One decoded word sequence with its score breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    /// Acoustic plus transition score.
    pub acoustic: f64,
    /// Unweighted first-pass language-model log probability.
    pub lm: f64,
    /// Search score, `acoustic + lm_weight * lm`.
    pub score: f64,
    /// Per-frame states; empty for lists read back from disk.
    pub alignment: Vec<StateId>,
}

/// Hypotheses ranked by score, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NBestList {
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

/// Frame scores `log P(s|x_t) - prior_scale * log P(s)`.
pub fn acoustic_scores(
    log_post: ArrayView2<'_, f64>,
    log_prior: ArrayView1<'_, f64>,
    prior_scale: f64,
) -> Result<Array2<f64>> {
    if log_post.ncols() != log_prior.len() {
        return Err(Error::Contract(format!(
            "{} posterior columns but {} priors",
            log_post.ncols(),
            log_prior.len()
        )));
    }
    if log_post.nrows() == 0 {
        return Err(Error::Contract("no frames to decode".into()));
    }
    if log_post.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite frame posterior".into()));
    }
    Ok(&log_post - &(&log_prior * prior_scale))
}

fn check_scores(graph: &DecodingGraph, scores: ArrayView2<'_, f64>) -> Result<()> {
    if scores.nrows() == 0 {
        return Err(Error::Contract("no frames to decode".into()));
    }
    if let Some(n) = graph.nodes.iter().find(|n| n.state >= scores.ncols()) {
        return Err(Error::Contract(format!(
            "graph state {} outside {} score columns",
            n.state,
            scores.ncols()
        )));
    }
    Ok(())
}

/// Interned word histories: equal sequences share one id.
struct Histories {
    links: Vec<(u32, WordId)>,
    lookup: HashMap<(u32, WordId), u32>,
}

const ROOT: u32 = u32::MAX;

impl Histories {
    fn new() -> Self {
        Self {
            links: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    fn extend(&mut self, parent: u32, word: WordId) -> u32 {
        *self.lookup.entry((parent, word)).or_insert_with(|| {
            self.links.push((parent, word));
            (self.links.len() - 1) as u32
        })
    }

    fn words(&self, mut id: u32) -> Vec<WordId> {
        let mut out = Vec::new();
        while id != ROOT {
            let (p, w) = self.links[id as usize];
            out.push(w);
            id = p;
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Back {
    Start(u32),
    Arc { arc: u32, rank: u32 },
}

#[derive(Debug, Clone, Copy)]
struct Token {
    score: f64,
    hist: u32,
    back: Back,
}

/// Keeps the best token per history, then the `n` best overall. Candidate
/// order breaks score ties.
fn select(cands: &mut Vec<Token>, n: usize, out: &mut Vec<Token>) {
    out.clear();
    if n == 1 {
        if let Some(best) = cands.iter().copied().reduce(|a, b| if b.score > a.score { b } else { a }) {
            out.push(best);
        }
        return;
    }
    cands.sort_by(|a, b| b.score.total_cmp(&a.score));
    for c in cands.iter() {
        if out.len() == n {
            break;
        }
        if !out.iter().any(|o| o.hist == c.hist) {
            out.push(*c);
        }
    }
}

/// Top `n` distinct word sequences. The k-best recursion keeps, at each
/// frame and node, the best `n` partial paths with distinct word histories,
/// which is exact for distinct full sequences.
pub fn nbest_decode(
    graph: &DecodingGraph,
    scores: ArrayView2<'_, f64>,
    n: usize,
    config: &DecodeConfig,
) -> Result<NBestList> {
    if n == 0 {
        return Err(Error::Contract("n-best size must be at least 1".into()));
    }
    check_scores(graph, scores)?;
    let lw = config.lm_weight;
    let frames = scores.nrows();
    let nodes = graph.len();
    let mut hist = Histories::new();
    let mut lattice: Vec<Vec<Vec<Token>>> = Vec::with_capacity(frames);
    let mut cands = Vec::new();

    let mut first = vec![Vec::new(); nodes];
    for v in 0..nodes {
        cands.clear();
        for (i, e) in graph.initial.iter().enumerate().filter(|(_, e)| e.node == v) {
            let s = e.weight + lw * e.lm;
            if s > f64::NEG_INFINITY {
                let h = match graph.emits(None, v) {
                    Some(w) => hist.extend(ROOT, w),
                    None => ROOT,
                };
                cands.push(Token { score: s, hist: h, back: Back::Start(i as u32) });
            }
        }
        select(&mut cands, n, &mut first[v]);
        let ac = scores[[0, graph.nodes[v].state]];
        first[v].iter_mut().for_each(|t| t.score += ac);
    }
    lattice.push(first);

    for t in 1..frames {
        let prev = &lattice[t - 1];
        let mut cur = vec![Vec::new(); nodes];
        for v in 0..nodes {
            cands.clear();
            for (ai, a) in graph.incoming[v].iter().enumerate() {
                let step = a.weight + lw * a.lm;
                if step == f64::NEG_INFINITY {
                    continue;
                }
                let word = graph.emits(Some(a.src), v);
                for (r, tok) in prev[a.src].iter().enumerate() {
                    let h = match word {
                        Some(w) => hist.extend(tok.hist, w),
                        None => tok.hist,
                    };
                    cands.push(Token {
                        score: tok.score + step,
                        hist: h,
                        back: Back::Arc { arc: ai as u32, rank: r as u32 },
                    });
                }
            }
            select(&mut cands, n, &mut cur[v]);
            let ac = scores[[t, graph.nodes[v].state]];
            cur[v].iter_mut().for_each(|tok| tok.score += ac);
        }
        lattice.push(cur);
    }

    // (score, hist, final index, rank at the final node)
    let mut ends: Vec<(f64, u32, usize, usize)> = Vec::new();
    for (fi, e) in graph.finals.iter().enumerate() {
        let step = e.weight + lw * e.lm;
        if step == f64::NEG_INFINITY {
            continue;
        }
        for (r, tok) in lattice[frames - 1][e.node].iter().enumerate() {
            ends.push((tok.score + step, tok.hist, fi, r));
        }
    }
    ends.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut picked: Vec<(f64, u32, usize, usize)> = Vec::new();
    for e in ends {
        if picked.len() == n {
            break;
        }
        if !picked.iter().any(|p| p.1 == e.1) {
            picked.push(e);
        }
    }
    if picked.is_empty() {
        return Err(Error::DecodeFailure { frames });
    }

    let hypotheses = picked
        .into_iter()
        .map(|(score, h, fi, rank)| {
            let fin = graph.finals[fi];
            let mut acoustic = fin.weight;
            let mut lm = fin.lm;
            let mut path = vec![0; frames];
            let (mut v, mut r) = (fin.node, rank);
            for t in (0..frames).rev() {
                path[t] = graph.nodes[v].state;
                acoustic += scores[[t, graph.nodes[v].state]];
                match lattice[t][v][r].back {
                    Back::Start(i) => {
                        let e = graph.initial[i as usize];
                        acoustic += e.weight;
                        lm += e.lm;
                    }
                    Back::Arc { arc, rank } => {
                        let a = graph.incoming[v][arc as usize];
                        acoustic += a.weight;
                        lm += a.lm;
                        v = a.src;
                        r = rank as usize;
                    }
                }
            }
            Hypothesis {
                words: hist.words(h).into_iter().map(|w| graph.words[w].clone()).collect(),
                acoustic,
                lm,
                score,
                alignment: path,
            }
        })
        .collect();
    Ok(NBestList { hypotheses })
}

/// Single best path.
pub fn viterbi_decode(
    graph: &DecodingGraph,
    scores: ArrayView2<'_, f64>,
    config: &DecodeConfig,
) -> Result<Hypothesis> {
    let mut list = nbest_decode(graph, scores, 1, config)?;
    Ok(list.hypotheses.remove(0))
}

/// Result of aligning a known transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedAlignment {
    pub alignment: Alignment,
    pub score: f64,
}

/// Viterbi restricted to paths whose word sequence is `words`: the search
/// runs over (node, words emitted so far) and only admits word entries that
/// match the transcript.
pub fn force_align(
    graph: &DecodingGraph,
    words: &[String],
    scores: ArrayView2<'_, f64>,
    config: &DecodeConfig,
) -> Result<ForcedAlignment> {
    check_scores(graph, scores)?;
    let ids: Vec<WordId> = words
        .iter()
        .map(|w| graph.words.iter().position(|g| g == w).ok_or_else(|| Error::UnknownWord(w.clone())))
        .collect::<Result<_>>()?;
    let frames = scores.nrows();
    let nodes = graph.len();
    let len = ids.len();
    let lw = config.lm_weight;
    let width = (len + 1) * nodes;
    let at = |k: usize, v: NodeId| k * nodes + v;
    // position after entering node v from src while k words were emitted
    let advance = |k: usize, src: Option<NodeId>, v: NodeId| match graph.emits(src, v) {
        Some(w) => (k < len && ids[k] == w).then_some(k + 1),
        None => Some(k),
    };

    let mut delta = Array1::from_elem(width, f64::NEG_INFINITY);
    // back[t][cell] = incoming arc index, u32::MAX for a start entry
    let mut back = vec![vec![u32::MAX; width]; frames];
    let mut start = vec![usize::MAX; width];
    for (i, e) in graph.initial.iter().enumerate() {
        if let Some(k) = advance(0, None, e.node) {
            let s = e.weight + lw * e.lm;
            let c = at(k, e.node);
            if s > delta[c] {
                delta[c] = s;
                start[c] = i;
            }
        }
    }
    for v in 0..nodes {
        for k in 0..=len {
            delta[at(k, v)] += scores[[0, graph.nodes[v].state]];
        }
    }
    for t in 1..frames {
        let mut next = Array1::from_elem(width, f64::NEG_INFINITY);
        for v in 0..nodes {
            let ac = scores[[t, graph.nodes[v].state]];
            for (ai, a) in graph.incoming[v].iter().enumerate() {
                let step = a.weight + lw * a.lm;
                for k in 0..=len {
                    let from = delta[at(k, a.src)];
                    if from == f64::NEG_INFINITY {
                        continue;
                    }
                    if let Some(k2) = advance(k, Some(a.src), v) {
                        let s = from + step;
                        if s > next[at(k2, v)] {
                            next[at(k2, v)] = s;
                            back[t][at(k2, v)] = ai as u32;
                        }
                    }
                }
            }
            for k in 0..=len {
                next[at(k, v)] += ac;
            }
        }
        delta = next;
    }
    let mut best: Option<(f64, usize)> = None;
    for (fi, e) in graph.finals.iter().enumerate() {
        let s = delta[at(len, e.node)] + e.weight + lw * e.lm;
        if s > f64::NEG_INFINITY && best.is_none_or(|(b, _)| s > b) {
            best = Some((s, fi));
        }
    }
    let Some((score, fi)) = best else {
        let min_frames: usize = ids.iter().map(|&w| min_word_frames(graph, w)).sum();
        return Err(Error::AlignmentFailure { frames, min_frames });
    };
    let mut states = vec![0; frames];
    let (mut k, mut v) = (len, graph.finals[fi].node);
    for t in (0..frames).rev() {
        states[t] = graph.nodes[v].state;
        if t > 0 {
            let a = graph.incoming[v][back[t][at(k, v)] as usize];
            if graph.emits(Some(a.src), v).is_some() {
                k -= 1;
            }
            v = a.src;
        }
    }
    Ok(ForcedAlignment {
        alignment: Alignment {
            states,
            source: AlignmentSource::Forced,
        },
        score,
    })
}

/// Length of the shortest node chain from the start node of `word` to the
/// next word start or a final node.
fn min_word_frames(graph: &DecodingGraph, word: WordId) -> usize {
    let Some(first) = graph.nodes.iter().position(|n| n.word == Some(word)) else {
        return 1;
    };
    let mut outgoing = vec![Vec::new(); graph.len()];
    for (dst, arcs) in graph.incoming.iter().enumerate() {
        for a in arcs {
            outgoing[a.src].push(dst);
        }
    }
    let mut dist = vec![usize::MAX; graph.len()];
    dist[first] = 1;
    let mut queue = std::collections::VecDeque::from([first]);
    while let Some(v) = queue.pop_front() {
        if graph.finals.iter().any(|e| e.node == v) {
            return dist[v];
        }
        for &u in &outgoing[v] {
            if graph.nodes[u].word.is_some() && u != v {
                return dist[v];
            }
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    1
}

/// Geometric mean of the framewise posteriors along `alignment`.
pub fn utterance_confidence(alignment: &[StateId], log_post: ArrayView2<'_, f64>) -> Result<f64> {
    if alignment.len() != log_post.nrows() || alignment.is_empty() {
        return Err(Error::Contract(format!(
            "alignment of {} frames for {} posterior rows",
            alignment.len(),
            log_post.nrows()
        )));
    }
    let mean = alignment
        .iter()
        .enumerate()
        .map(|(t, &s)| log_post[[t, s]])
        .sum::<f64>()
        / alignment.len() as f64;
    Ok(mean.exp().clamp(0.0, 1.0))
}
