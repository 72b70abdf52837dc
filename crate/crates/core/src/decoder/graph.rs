//! HMM state graph: nodes emit one state each, arcs carry a transition
//! weight and a separate language-model log probability.

use std::collections::VecDeque;

use super::lm::{BigramLm, WordId};
use super::{DecodeConfig, Lexicon};
use crate::error::{Error, Result};
use crate::inventory::{StateId, StateInventory};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub state: StateId,
    /// Set on the first node of a word: entering it from another node
    /// (or from the start) emits the word.
    pub word: Option<WordId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub src: NodeId,
    pub weight: f64,
    pub lm: f64,
}

/// Entry into (or exit from) the graph at `node`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoint {
    pub node: NodeId,
    pub weight: f64,
    pub lm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodingGraph {
    pub nodes: Vec<Node>,
    /// Incoming arcs per node.
    pub incoming: Vec<Vec<Arc>>,
    pub initial: Vec<Endpoint>,
    pub finals: Vec<Endpoint>,
    pub words: Vec<String>,
}

impl DecodingGraph {
    pub fn new(words: Vec<String>) -> Self {
        Self {
            nodes: Vec::new(),
            incoming: Vec::new(),
            initial: Vec::new(),
            finals: Vec::new(),
            words,
        }
    }

    pub fn add_node(&mut self, state: StateId, word: Option<WordId>) -> NodeId {
        self.nodes.push(Node { state, word });
        self.incoming.push(Vec::new());
        self.nodes.len() - 1
    }

    pub fn add_arc(&mut self, src: NodeId, dst: NodeId, weight: f64, lm: f64) {
        self.incoming[dst].push(Arc { src, weight, lm });
    }

    pub fn add_initial(&mut self, node: NodeId, weight: f64, lm: f64) {
        self.initial.push(Endpoint { node, weight, lm });
    }

    pub fn add_final(&mut self, node: NodeId, weight: f64, lm: f64) {
        self.finals.push(Endpoint { node, weight, lm });
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_arcs(&self) -> usize {
        self.incoming.iter().map(Vec::len).sum()
    }

    /// Whether moving `src -> dst` emits a word.
    pub fn emits(&self, src: Option<NodeId>, dst: NodeId) -> Option<WordId> {
        match src {
            Some(s) if s == dst => None,
            _ => self.nodes[dst].word,
        }
    }

    /// Structural checks: ids in range, weights not NaN, every node
    /// reachable from an initial node and able to reach a final one.
    pub fn audit(&self, inventory: &StateInventory) -> Result<()> {
        let n = self.len();
        for (i, node) in self.nodes.iter().enumerate() {
            inventory.check(node.state)?;
            if let Some(w) = node.word {
                if w >= self.words.len() {
                    return Err(Error::Config(format!("node {i} carries unknown word id {w}")));
                }
            }
        }
        let endpoint_ok = |e: &Endpoint| e.node < n && !e.weight.is_nan() && !e.lm.is_nan();
        if !self.initial.iter().chain(&self.finals).all(endpoint_ok) {
            return Err(Error::Config("bad initial or final entry".into()));
        }
        let mut outgoing = vec![Vec::new(); n];
        for (dst, arcs) in self.incoming.iter().enumerate() {
            for a in arcs {
                if a.src >= n || a.weight.is_nan() || a.lm.is_nan() {
                    return Err(Error::Config(format!("bad arc into node {dst}")));
                }
                outgoing[a.src].push(dst);
            }
        }
        let fwd = flood(n, self.initial.iter().map(|e| e.node), |v| outgoing[v].clone());
        let bwd = flood(n, self.finals.iter().map(|e| e.node), |v| {
            self.incoming[v].iter().map(|a| a.src).collect()
        });
        if let Some(v) = (0..n).find(|&v| !fwd[v]) {
            return Err(Error::Config(format!("node {v} is unreachable from the start")));
        }
        if let Some(v) = (0..n).find(|&v| !bwd[v]) {
            return Err(Error::Config(format!("node {v} cannot reach a final node")));
        }
        Ok(())
    }
}

fn flood(n: usize, seeds: impl Iterator<Item = usize>, next: impl Fn(usize) -> Vec<usize>) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = seeds.collect();
    for &s in &queue {
        seen[s] = true;
    }
    while let Some(v) = queue.pop_front() {
        for u in next(v) {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen
}

/// Word loop with bigram weights on word entry. Every word has one chain of
/// speech states; a non-speech block (all non-speech states, fully
/// connected) follows each history so that the bigram context survives
/// pauses.
pub fn build_graph(
    lexicon: &Lexicon,
    lm: &BigramLm,
    inventory: &StateInventory,
    config: &DecodeConfig,
) -> Result<DecodingGraph> {
    config.validate()?;
    if lm.vocab() != lexicon.words() {
        return Err(Error::Config(
            "lexicon and language model vocabularies differ".into(),
        ));
    }
    lexicon.check(inventory)?;
    let stay = config.self_loop_prob.ln();
    let go = (1.0 - config.self_loop_prob).ln();
    let pen = config.word_insertion_penalty;
    let mut g = DecodingGraph::new(lexicon.words().to_vec());

    let mut word_first = Vec::new();
    let mut word_last = Vec::new();
    for (w, states) in lexicon.pronunciations().iter().enumerate() {
        let mut prev = None;
        for (k, &s) in states.iter().enumerate() {
            let v = g.add_node(s, (k == 0).then_some(w));
            g.add_arc(v, v, stay, 0.0);
            if let Some(p) = prev {
                g.add_arc(p, v, go, 0.0);
            } else {
                word_first.push(v);
            }
            prev = Some(v);
        }
        word_last.push(prev.expect("non-empty pronunciation"));
    }

    let ns_block = |g: &mut DecodingGraph| -> Vec<NodeId> {
        let block: Vec<NodeId> = lexicon.nonspeech().iter().map(|&s| g.add_node(s, None)).collect();
        for &a in &block {
            for &b in &block {
                g.add_arc(a, b, if a == b { stay } else { go }, 0.0);
            }
        }
        block
    };

    // history None is sentence begin
    let histories: Vec<Option<WordId>> =
        std::iter::once(None).chain((0..lexicon.len()).map(Some)).collect();
    for &h in &histories {
        let after_word = h.map(|w| word_last[w]);
        let ns = match h {
            None if config.boundary_nonspeech => ns_block(&mut g),
            Some(_) if config.boundary_nonspeech || config.interword_nonspeech => ns_block(&mut g),
            _ => Vec::new(),
        };
        // entry into this history's context
        match after_word {
            None => {
                for &v in &ns {
                    g.add_initial(v, 0.0, 0.0);
                }
            }
            Some(last) => {
                for &v in &ns {
                    g.add_arc(last, v, go, 0.0);
                }
            }
        }
        let ns_continues = h.is_none() || config.interword_nonspeech;
        let ns_ends = config.boundary_nonspeech;
        for (v, &first) in word_first.iter().enumerate() {
            let lp = lm.log_p(h, Some(v));
            match after_word {
                None => g.add_initial(first, pen, lp),
                Some(last) => g.add_arc(last, first, go + pen, lp),
            }
            if ns_continues {
                for &n in &ns {
                    g.add_arc(n, first, go + pen, lp);
                }
            }
        }
        let end = lm.log_p(h, None);
        if let Some(last) = after_word {
            g.add_final(last, 0.0, end);
        }
        if ns_ends {
            for &n in &ns {
                g.add_final(n, 0.0, end);
            }
        }
    }
    g.audit(inventory)?;
    Ok(g)
}
