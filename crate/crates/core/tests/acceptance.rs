//! Acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Property criteria fail the run. The directional experiments (NSDL,
//! Bi-APC, SSL on the synthetic corpus) and the batch-norm gradient
//! diagnostic are reported but do not fail it.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use asrlab::biapc::BiApcModel;
use asrlab::config::PipelineConfig;
use asrlab::corpus::{generate_corpus, CorpusConfig, Split};
use asrlab::data::feature_items;
use asrlab::decoder::{
    align_counts, force_align, nbest_decode, read_nbest, viterbi_decode, DecodeConfig, DecodingGraph, NBestList,
    WerCounts,
};
use asrlab::frontend::{chunk_sequence, AugmentationSpec, ChunkSpec};
use asrlab::inventory::StateInventory;
use asrlab::model::{AcousticModel, LossKind};
use asrlab::nnet::{assign_flat, flatten, grad_check, probe_indices, BlstmStackConfig, GradReport, Mode};
use asrlab::nsdl::{
    build_speech_mask, combine_distribution, loss_l1, loss_l2, loss_nsdl, nonspeech_prob, NsdlLossConfig,
    NsdlOutputs,
};
use asrlab::pipeline::{Init, MetricsReport, Pipeline, SslOutcome, TrainOutcome};
use asrlab::recognize::Recognizer;
use asrlab::rnnlm::{rescore_nbest, train_lm, RescoreMode, RnnLm, RnnLmConfig, Vocab};
use asrlab::seed;
use asrlab::ssl::{filter_by_threshold, pseudo_label};
use ndarray::{array, s, Array2};
use rand::Rng;

const FD_STEP: f64 = 1e-3;
const FD_TOL: f64 = 1e-4;
const FD_PROBES: usize = 250;
const SEEDS: [u64; 3] = [1, 2, 3];

/// Desk-scale lab shared by the directional criteria.
const DESK: &str = r#"
[corpus]
transcribed = 100
untranscribed = 240
dev = 60
eval = 40
word_gain_range = [0.02, 1.0]

[model]
num_blocks = 4
hidden_per_direction = 48

[train]
epochs = 40
lr_decay = 0.95
dev_every = 0
sgd = { learning_rate = 0.05 }

[augmentation]
transcribed = "-"
untranscribed = "-"

[biapc]
epochs = 10

[ssl]
epochs = 10
iterations = [
  { threshold = 0.35, transcribed_augmentation = "-", untranscribed_augmentation = "-" },
  { threshold = 0.3, transcribed_augmentation = "-", untranscribed_augmentation = "-" },
  { threshold = 0.28, transcribed_augmentation = "-", untranscribed_augmentation = "-" },
]
"#;

/// Small end-to-end lab for the determinism check.
const TINY: &str = r#"
[corpus]
transcribed = 14
untranscribed = 6
dev = 4
eval = 4
written_sentences = 20

[model]
num_blocks = 2
hidden_per_direction = 8

[train]
epochs = 2

[augmentation]
transcribed = "2x SP"
untranscribed = "-"

[biapc]
epochs = 1

[ssl]
iterations = [
  { threshold = 0.35, transcribed_augmentation = "-", untranscribed_augmentation = "3x SP" },
  { threshold = 0.3, transcribed_augmentation = "-", untranscribed_augmentation = "-" },
  { threshold = 0.28, transcribed_augmentation = "-", untranscribed_augmentation = "-" },
]

[rnnlm]
embedding = 8
hidden = 8
epochs = 2

[decode]
nbest = 4
"#;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn uniform(rows: usize, cols: usize, bound: f64, r: &mut seed::Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-bound..bound))
}

// ---------------------------------------------------------------- equations

fn equations() -> Verdict {
    let inv = StateInventory::contiguous(2, 2).unwrap();
    let cfg = NsdlLossConfig::default();
    let mut failures = Vec::new();

    let mut r = seed::rng(11, "acc-eq", 0);
    let mut worst_norm: f64 = 0.0;
    for _ in 0..200 {
        let t = r.random_range(1..6);
        let out = NsdlOutputs::from_logits(uniform(t, 3, 8.0, &mut r).view(), uniform(t, 2, 8.0, &mut r).view());
        let p = combine_distribution(&out, &inv).unwrap();
        for row in p.rows() {
            worst_norm = worst_norm.max((row.sum() - 1.0).abs());
        }
    }
    if worst_norm > 1e-10 {
        failures.push(format!("normalisation {worst_norm:e}"));
    }

    let frame = NsdlOutputs {
        p1: array![[0.25, 0.25, 0.5]],
        p2: array![[0.4, 0.6]],
    };
    let mask = build_speech_mask(&[2], &inv).unwrap();
    let l1 = loss_l1(&frame, &mask).unwrap();
    let l2 = loss_l2(&frame, &[2], &inv, &cfg).unwrap();
    let total = loss_nsdl(&frame, &[2], &mask, &inv, &cfg).unwrap().total;
    for (name, got, want) in [("L1", l1, 0.6931), ("L2", l2, 1.6094), ("total", total, 2.3026)] {
        if !close(got, want, 1e-4) {
            failures.push(format!("{name} {got:.6} != {want}"));
        }
    }
    let ns = nonspeech_prob(&NsdlOutputs {
        p1: array![[0.2, 0.3, 0.5]],
        p2: array![[0.4, 0.6]],
    });
    if !close(ns[0], 0.5, 1e-15) {
        failures.push(format!("P(non-speech) {}", ns[0]));
    }

    let mut worst_affine: f64 = 0.0;
    for _ in 0..50 {
        let t = r.random_range(1..8);
        let out = NsdlOutputs::from_logits(uniform(t, 3, 4.0, &mut r).view(), uniform(t, 2, 4.0, &mut r).view());
        let ali: Vec<usize> = (0..t).map(|_| r.random_range(0..4)).collect();
        let mask = build_speech_mask(&ali, &inv).unwrap();
        let at = |lambda: f64| {
            let c = NsdlLossConfig { lambda, ..cfg.clone() };
            loss_nsdl(&out, &ali, &mask, &inv, &c).unwrap()
        };
        let (b0, b1, b2) = (at(0.0), at(1.0), at(2.0));
        for (lambda, b) in [(0.0, &b0), (1.0, &b1), (2.0, &b2)] {
            worst_affine = worst_affine.max((b.total - (b0.l1 + lambda * b0.l2)).abs());
        }
    }
    if worst_affine > 1e-12 {
        failures.push(format!("lambda affinity {worst_affine:e}"));
    }

    let detail = if failures.is_empty() {
        format!("norm err {worst_norm:.1e}, L1 {l1:.4}, L2 {l2:.4}, total {total:.4}, affine err {worst_affine:.1e}")
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- gradients

fn trunk(blocks: usize, hidden: usize, input: usize, batch_norm: bool) -> BlstmStackConfig {
    BlstmStackConfig {
        num_blocks: blocks,
        hidden_per_direction: hidden,
        input_dim: input,
        dropout_rate: 0.0,
        batch_norm,
    }
}

fn acoustic_check(loss: LossKind, batch_norm: bool, step: f64) -> GradReport {
    let inv = StateInventory::contiguous(3, 6).unwrap();
    let cfg = trunk(2, 4, 6, batch_norm);
    let mut r = seed::rng(21, "acc-grad", loss as u64);
    let m = AcousticModel::new(&cfg, &inv, loss, &mut r).unwrap();
    let x = uniform(28, 6, 1.5, &mut r);
    let core = 4..24;
    let ali: Vec<usize> = (0..core.len()).map(|_| r.random_range(0..inv.len())).collect();
    let nsdl = NsdlLossConfig::default();
    let run = |m: &AcousticModel| {
        m.chunk_gradient(x.view(), core.clone(), &ali, &nsdl, &mut seed::rng(0, "drop", 0))
            .unwrap()
    };
    let g = run(&m);
    let theta = flatten(&m);
    let mut scratch = m.clone();
    grad_check(
        |p| {
            assign_flat(&mut scratch, p);
            run(&scratch).breakdown.total
        },
        &theta,
        &flatten(&g.grads),
        &probe_indices(theta.len(), FD_PROBES, 5),
        step,
        FD_TOL,
    )
    .unwrap()
}

fn biapc_check(batch_norm: bool, step: f64) -> GradReport {
    let mut r = seed::rng(22, "acc-grad", 0);
    let m = BiApcModel::new(&trunk(2, 4, 6, batch_norm), &mut r).unwrap();
    let x = uniform(24, 6, 1.0, &mut r);
    let run = |m: &BiApcModel| m.chunk_gradient(x.view(), 0..24, 2..22, 2, &mut seed::rng(0, "drop", 0)).unwrap();
    let (_, g, _) = run(&m);
    let theta = flatten(&m);
    let mut scratch = m.clone();
    grad_check(
        |p| {
            assign_flat(&mut scratch, p);
            run(&scratch).0
        },
        &theta,
        &flatten(&g),
        &probe_indices(theta.len(), FD_PROBES, 6),
        step,
        FD_TOL,
    )
    .unwrap()
}

fn lm_check() -> GradReport {
    let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let texts = vec![words("kim tok sam tok"), words("sam lu")];
    let cfg = RnnLmConfig {
        embedding: 8,
        hidden: 6,
        layers: 2,
        ..RnnLmConfig::default()
    };
    let lm = RnnLm::new(Vocab::build(&texts, 1), &cfg, &mut seed::rng(23, "acc-grad", 0)).unwrap();
    let (_, _, g) = lm.sentence_gradient(&texts[0]).unwrap();
    let theta = flatten(&lm);
    let mut scratch = lm.clone();
    grad_check(
        |p| {
            assign_flat(&mut scratch, p);
            scratch.sentence_gradient(&texts[0]).unwrap().0
        },
        &theta,
        &flatten(&g),
        &probe_indices(theta.len(), FD_PROBES, 7),
        FD_STEP,
        FD_TOL,
    )
    .unwrap()
}

fn summarise(runs: &[(&str, GradReport)]) -> (bool, String) {
    let pass = runs.iter().all(|(_, r)| r.passed() && r.probes >= 200);
    let detail = runs
        .iter()
        .map(|(n, r)| format!("{n} {:.1e} ({}/{})", r.max_relative_error, r.probes - r.failures.len(), r.probes))
        .collect::<Vec<_>>()
        .join(", ");
    (pass, detail)
}

fn gradients() -> Verdict {
    let (pass, detail) = summarise(&[
        ("nsdl", acoustic_check(LossKind::Nsdl, false, FD_STEP)),
        ("ce", acoustic_check(LossKind::Ce, false, FD_STEP)),
        ("biapc", biapc_check(false, FD_STEP)),
        ("lm", lm_check()),
    ]);
    verdict(pass, format!("2-block trunks, step {FD_STEP:e}, tol {FD_TOL:e}: {detail}"))
}

/// Same checks through batch-normalised trunks, where central differences
/// at the pinned step carry visible truncation error; the finer step shows
/// whether the analytic gradient itself is right.
fn gradients_batch_norm() -> Verdict {
    let bn = |step| {
        summarise(&[
            ("nsdl", acoustic_check(LossKind::Nsdl, true, step)),
            ("ce", acoustic_check(LossKind::Ce, true, step)),
            ("biapc", biapc_check(true, step)),
        ])
    };
    let (pass, detail) = bn(FD_STEP);
    let (_, fine) = bn(1e-5);
    verdict(pass, format!("step {FD_STEP:e}: {detail}; step 1e-5: {fine}"))
}

// ------------------------------------------------------ direction isolation

fn direction_isolation() -> Verdict {
    let n = 2;
    let mut violations = 0;
    let mut vacuous = 0;
    for i in 0..50 {
        let mut r = seed::rng(31, "acc-iso", i);
        let m = BiApcModel::new(&trunk(2, 4, 6, true), &mut r).unwrap();
        let t = r.random_range(n + 2..=30);
        let k = r.random_range(1..t);
        let x = uniform(t, 6, 1.0, &mut r);
        let base = m.forward(x.view(), n, Mode::Eval).unwrap();

        let mut future = x.clone();
        future.slice_mut(s![k.., ..]).mapv_inplace(|v| v * -2.0 + 0.7);
        let p = m.forward(future.view(), n, Mode::Eval).unwrap();
        // forward row j predicts j + n from frames 0..=j
        let kept = k.min(t - n);
        if p.forward.slice(s![..kept, ..]) != base.forward.slice(s![..kept, ..]) {
            violations += 1;
        }
        if kept < t - n && p.forward.slice(s![kept.., ..]) == base.forward.slice(s![kept.., ..]) {
            vacuous += 1;
        }

        let mut past = x.clone();
        past.slice_mut(s![..k, ..]).mapv_inplace(|v| v * -2.0 + 0.7);
        let p = m.forward(past.view(), n, Mode::Eval).unwrap();
        // backward row j predicts j from frames j + n.. (row index = position - n)
        let from = k.saturating_sub(n).min(t - n);
        if p.backward.slice(s![from.., ..]) != base.backward.slice(s![from.., ..]) {
            violations += 1;
        }
        if from > 0 && p.backward.slice(s![..from, ..]) == base.backward.slice(s![..from, ..]) {
            vacuous += 1;
        }
    }
    verdict(
        violations == 0 && vacuous == 0,
        format!("50 instances, {violations} leaks, {vacuous} perturbations without effect"),
    )
}

// ----------------------------------------------------------- decoder oracle

const TOY_STATES: usize = 5;

fn toy_graph(r: &mut seed::Rng) -> DecodingGraph {
    let n = r.random_range(1..=4);
    let mut g = DecodingGraph::new(vec!["x".into(), "y".into(), "z".into()]);
    for _ in 0..n {
        let word = r.random_bool(0.5).then(|| r.random_range(0..3));
        g.add_node(r.random_range(0..TOY_STATES), word);
    }
    for a in 0..n {
        for b in 0..n {
            if r.random_bool(0.6) {
                g.add_arc(a, b, r.random_range(-2.0..0.0), r.random_range(-2.0..0.0));
            }
        }
    }
    for v in 0..n {
        if v == 0 || r.random_bool(0.4) {
            g.add_initial(v, r.random_range(-1.0..0.0), r.random_range(-1.0..0.0));
        }
        if v + 1 == n || r.random_bool(0.4) {
            g.add_final(v, r.random_range(-1.0..0.0), r.random_range(-1.0..0.0));
        }
    }
    g
}

struct Path_ {
    score: f64,
    words: Vec<String>,
    states: Vec<usize>,
}

/// Scores every node sequence of length T independently.
fn enumerate_paths(g: &DecodingGraph, scores: &Array2<f64>, lw: f64) -> Vec<Path_> {
    let (t_len, n) = (scores.nrows(), g.nodes.len());
    let best = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    for code in 0..n.pow(t_len as u32) {
        let seq: Vec<usize> = (0..t_len).map(|t| code / n.pow(t as u32) % n).collect();
        let mut score = best(&mut g.initial.iter().filter(|e| e.node == seq[0]).map(|e| e.weight + lw * e.lm));
        let mut words: Vec<String> = g.nodes[seq[0]].word.map(|w| g.words[w].clone()).into_iter().collect();
        for t in 0..t_len {
            score += scores[[t, g.nodes[seq[t]].state]];
            if t + 1 < t_len {
                let (a, b) = (seq[t], seq[t + 1]);
                score += best(&mut g.incoming[b].iter().filter(|x| x.src == a).map(|x| x.weight + lw * x.lm));
                if a != b {
                    words.extend(g.nodes[b].word.map(|w| g.words[w].clone()));
                }
            }
        }
        score += best(&mut g.finals.iter().filter(|e| e.node == seq[t_len - 1]).map(|e| e.weight + lw * e.lm));
        if score > f64::NEG_INFINITY {
            out.push(Path_ {
                score,
                words,
                states: seq.iter().map(|&v| g.nodes[v].state).collect(),
            });
        }
    }
    out
}

/// Minimum edit distance by plain recursion with memoisation.
fn edit_distance(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let key = (a.len(), b.len());
    if let Some(&d) = memo.get(&key) {
        return d;
    }
    let d = (edit_distance(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]))
        .min(edit_distance(&a[1..], b, memo) + 1)
        .min(edit_distance(a, &b[1..], memo) + 1);
    memo.insert(key, d);
    d
}

fn decoder_oracle() -> Verdict {
    let cfg = DecodeConfig {
        lm_weight: 1.7,
        ..DecodeConfig::default()
    };
    let (mut mismatches, mut decoded) = (Vec::new(), 0);
    for i in 0..100u64 {
        let mut r = seed::rng(41, "acc-toy", i);
        let g = toy_graph(&mut r);
        let t_len = r.random_range(1..=6);
        let scores = Array2::from_shape_fn((t_len, TOY_STATES), |_| r.random_range(-5.0..0.0));
        let paths = enumerate_paths(&g, &scores, cfg.lm_weight);
        let res = viterbi_decode(&g, scores.view(), &cfg);
        let Some(top) = paths.iter().max_by(|a, b| a.score.total_cmp(&b.score)) else {
            if res.is_ok() {
                mismatches.push(format!("{i}: decoded an undecodable instance"));
            }
            continue;
        };
        decoded += 1;
        let Ok(h) = res else {
            mismatches.push(format!("{i}: viterbi failed"));
            continue;
        };
        if !close(h.score, top.score, 1e-9) || h.alignment != top.states {
            mismatches.push(format!("{i}: viterbi"));
        }
        // best score per distinct word sequence
        let mut by_words: Vec<(Vec<String>, f64)> = Vec::new();
        for p in &paths {
            match by_words.iter_mut().find(|(w, _)| *w == p.words) {
                Some(e) => e.1 = e.1.max(p.score),
                None => by_words.push((p.words.clone(), p.score)),
            }
        }
        by_words.sort_by(|a, b| b.1.total_cmp(&a.1));
        let list = nbest_decode(&g, scores.view(), 4, &cfg).unwrap();
        let top1 = list.best().unwrap();
        if top1.words != by_words[0].0 || !close(top1.score, by_words[0].1, 1e-9) {
            mismatches.push(format!("{i}: n-best top-1"));
        }
        for (words, sc) in &by_words {
            let fa = force_align(&g, words, scores.view(), &cfg).unwrap();
            if !close(fa.score, *sc, 1e-9) {
                mismatches.push(format!("{i}: forced alignment of {words:?}"));
            }
        }
    }

    let mut r = seed::rng(42, "acc-wer", 0);
    let mut wer_mismatch = 0;
    let vocab = ["a", "b", "c", "d"];
    for _ in 0..1000 {
        let a: Vec<u8> = (0..r.random_range(1..9)).map(|_| r.random_range(0..4)).collect();
        let b: Vec<u8> = (0..r.random_range(0..9)).map(|_| r.random_range(0..4)).collect();
        let as_words = |v: &[u8]| v.iter().map(|&i| vocab[i as usize].to_string()).collect::<Vec<_>>();
        let c = align_counts(&as_words(&a), &as_words(&b));
        let d = edit_distance(&a, &b, &mut HashMap::new());
        if c.substitutions + c.deletions + c.insertions != d || c.reference_words != a.len() {
            wer_mismatch += 1;
        }
    }
    let pass = mismatches.is_empty() && wer_mismatch == 0 && decoded >= 50;
    let mut detail = format!("100 toy graphs ({decoded} decodable), {} search mismatches; 1000 WER pairs, {wer_mismatch} mismatches", mismatches.len());
    if let Some(m) = mismatches.first() {
        detail += &format!("; first: {m}");
    }
    verdict(pass, detail)
}

// ------------------------------------------------------------ chunk context

fn chunk_context() -> Verdict {
    let inv = StateInventory::contiguous(3, 9).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let mut r = seed::rng(51, "acc-chunk", i);
        let m = AcousticModel::new(&trunk(2, 6, 8, true), &inv, LossKind::Nsdl, &mut r).unwrap();
        let t = r.random_range(20..160);
        let x = uniform(t, 8, 1.5, &mut r);
        let full = m.log_posteriors(x.view()).unwrap();
        let spec = ChunkSpec {
            core_length: r.random_range(5..50),
            context_length: t,
        };
        for c in chunk_sequence("u", t, spec).unwrap() {
            let span = c.span();
            let part = m.log_posteriors(x.slice(s![span.clone(), ..])).unwrap();
            let local = part.slice(s![c.core.start - span.start..c.core.end - span.start, ..]);
            for (a, b) in local.iter().zip(full.slice(s![c.core.clone(), ..]).iter()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(worst <= 1e-6, format!("20 utterances, max |diff| {worst:.1e} (tol 1e-6)"))
}

// ------------------------------------------------------- corpus calibration

fn corpus_calibration() -> Verdict {
    let cfg = CorpusConfig {
        transcribed: 100,
        untranscribed: 40,
        dev: 30,
        eval: 30,
        ..CorpusConfig::default()
    };
    let inv = cfg.inventory();
    let c = generate_corpus(&cfg, 1).unwrap();
    let (mut ns, mut sp) = (0usize, 0usize);
    for u in &c.utterances {
        for &s in &u.true_alignment {
            if inv.speech().contains(&s) {
                sp += 1;
            } else {
                ns += 1;
            }
        }
    }
    let ratio = ns as f64 / sp as f64;
    let train = c.manifest.split(Split::TranscribedTrain);
    let empty = train.iter().filter(|e| e.transcript.is_empty()).count();
    let want = (cfg.nonspeech_fraction * train.len() as f64).round() as usize;
    let pass = c.utterances.len() == 200 && (ratio - 2.2).abs() <= 0.22 && empty == want;
    verdict(
        pass,
        format!(
            "{} utterances, ratio {ratio:.3} (2.2 ± 10%), {empty}/{} pure non-speech ({:.1}%, configured {:.1}%)",
            c.utterances.len(),
            train.len(),
            100.0 * empty as f64 / train.len() as f64,
            100.0 * cfg.nonspeech_fraction
        ),
    )
}

// ------------------------------------------------------------ desk-scale lab

struct Lab {
    _dir: tempfile::TempDir,
    pipeline: Pipeline,
    ce: TrainOutcome,
    nsdl: TrainOutcome,
    biapc: TrainOutcome,
    ssl: SslOutcome,
}

fn desk_config(seed: u64, dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_toml(DESK).unwrap();
    cfg.seeds.corpus = seed;
    cfg.seeds.init = 100 + seed;
    cfg.seeds.dropout = 200 + seed;
    cfg.seeds.augmentation = 300 + seed;
    cfg.seeds.lm = 400 + seed;
    cfg.paths.work_dir = dir.to_path_buf();
    cfg
}

fn run_lab(seed: u64) -> Lab {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(desk_config(seed, dir.path())).unwrap();
    p.synth().unwrap();
    p.prepare().unwrap();
    let ce = p.train(LossKind::Ce, &Init::Random, None).unwrap();
    let nsdl = p.train(LossKind::Nsdl, &Init::Random, None).unwrap();
    let (pre, _) = p.pretrain().unwrap();
    let biapc = p.train(LossKind::Nsdl, &Init::Biapc(pre), None).unwrap();
    let ssl = p.ssl(&biapc.checkpoint).unwrap();
    eprintln!(
        "  lab seed {seed}: ce {:.2}, nsdl {:.2}, nsdl+biapc {:.2}, ssl {:.2} ({:.0}s)",
        ce.dev.wer(),
        nsdl.dev.wer(),
        biapc.dev.wer(),
        ssl.best_dev.wer(),
        t0.elapsed().as_secs_f64()
    );
    Lab {
        _dir: dir,
        pipeline: p,
        ce,
        nsdl,
        biapc,
        ssl,
    }
}

fn counts(c: &WerCounts) -> String {
    format!("{:.2}% (D{})", c.wer(), c.deletions)
}

fn nsdl_directional(labs: &[Lab]) -> Verdict {
    let fewer_del = labs.iter().filter(|l| l.nsdl.dev.deletions < l.ce.dev.deletions).count();
    let within = labs.iter().all(|l| l.nsdl.dev.wer() <= l.ce.dev.wer() + 1.0);
    let detail = labs
        .iter()
        .zip(SEEDS)
        .map(|(l, s)| format!("seed {s}: ce {} nsdl {}", counts(&l.ce.dev), counts(&l.nsdl.dev)))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        fewer_del >= 2 && within,
        format!("fewer deletions in {fewer_del}/3, WER within +1 in all: {within}; {detail}"),
    )
}

fn biapc_directional(labs: &[Lab]) -> Verdict {
    let wins = labs.iter().filter(|l| l.biapc.dev.wer() <= l.nsdl.dev.wer()).count();
    let detail = labs
        .iter()
        .zip(SEEDS)
        .map(|(l, s)| format!("seed {s}: random {:.2} biapc {:.2}", l.nsdl.dev.wer(), l.biapc.dev.wer()))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(wins >= 2, format!("Bi-APC <= random init in {wins}/3; {detail}"))
}

/// Splits SSL into its mechanical checks (asserted) and the dev-WER outcome
/// (reported).
fn ssl_criterion(labs: &[Lab]) -> (Verdict, Verdict) {
    let mut problems = Vec::new();
    for (l, s) in labs.iter().zip(SEEDS) {
        let reps = &l.ssl.reports;
        let thresholds: Vec<f64> = reps.iter().map(|r| r.threshold).collect();
        if reps.len() + l.ssl.aborted.len() != 3 || (l.ssl.aborted.is_empty() && thresholds != [0.35, 0.3, 0.28]) {
            problems.push(format!("seed {s}: reports {thresholds:?}, aborted {:?}", l.ssl.aborted));
        }
        // argmin over completed iterations, earlier wins ties, seed model as fallback
        let mut best = (None, l.ssl.initial_dev);
        for r in reps {
            if r.dev.errors() < best.1.errors() {
                best = (Some(r.iteration), r.dev);
            }
        }
        if best.0 != l.ssl.best_iteration || best.1 != l.ssl.best_dev {
            problems.push(format!("seed {s}: best {:?} but argmin {:?}", l.ssl.best_iteration, best.0));
        }
    }

    // Acceptance counts for fixed confidences: the pool decoded once by the
    // pre-SSL model and filtered at every scheduled threshold. The first
    // count must also match the first iteration's report.
    let l = &labs[0];
    let p = &l.pipeline;
    let res = p.resources().unwrap();
    let pool = feature_items(
        &res.store,
        &res.entries(Split::UntranscribedTrain),
        &AugmentationSpec::none(),
        &res.noise,
        &p.config.frontend,
        0,
    )
    .unwrap();
    let model = p.load_acoustic(&l.biapc.checkpoint).unwrap();
    let records = pseudo_label(&Recognizer::new(&model, &res.graph, &p.config.decode), &pool, 1).unwrap();
    let accepted: Vec<usize> = [0.35, 0.3, 0.28]
        .iter()
        .map(|&t| filter_by_threshold(&records, t).len())
        .collect();
    let oracle: Vec<usize> = [0.35, 0.3, 0.28]
        .iter()
        .map(|&t| records.iter().filter(|r| r.confidence >= t).count())
        .collect();
    if accepted.windows(2).any(|w| w[0] > w[1]) || accepted != oracle {
        problems.push(format!("acceptance counts {accepted:?}, predicate oracle {oracle:?}"));
    }
    if l.ssl.reports.first().map(|r| r.accepted) != Some(accepted[0]) {
        problems.push(format!("iteration 1 accepted {:?}, re-decode {}", l.ssl.reports.first().map(|r| r.accepted), accepted[0]));
    }
    let mechanics = verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "3 reports per seed, argmin selection holds, {} decoded, accepted at 0.35/0.3/0.28: {accepted:?}",
                records.len()
            )
        } else {
            problems.join("; ")
        },
    );

    let mut improved = 0;
    let mut detail = Vec::new();
    for (l, s) in labs.iter().zip(SEEDS) {
        let best_iter = l.ssl.reports.iter().map(|r| r.dev.wer()).fold(f64::INFINITY, f64::min);
        if best_iter <= l.ssl.initial_dev.wer() {
            improved += 1;
        }
        let per: Vec<String> = l.ssl.reports.iter().map(|r| format!("{:.2}", r.dev.wer())).collect();
        detail.push(format!("seed {s}: pre {:.2} iters [{}]", l.ssl.initial_dev.wer(), per.join(", ")));
    }
    let outcome = verdict(
        improved >= 2,
        format!("best SSL iteration <= pre-SSL in {improved}/3; {}", detail.join("; ")),
    );
    (mechanics, outcome)
}

fn ranking(list: &NBestList) -> Vec<Vec<String>> {
    list.hypotheses.iter().map(|h| h.words.clone()).collect()
}

fn rescoring(lab: &Lab) -> Verdict {
    let p = &lab.pipeline;
    let mut problems = Vec::new();
    let (lm_path, _) = p.train_rnnlm().unwrap();
    let grid = p.rescore_grid(&lab.ssl.checkpoint, &lm_path).unwrap();
    let weights = &p.config.rescore.grid;
    let table_weights: Vec<f64> = grid.table.iter().map(|(w, _)| *w).collect();
    if &table_weights != weights || grid.to_csv().lines().count() != weights.len() + 1 {
        problems.push(format!("grid rows {table_weights:?} for weights {weights:?}"));
    }

    let out = p.evaluate(&lab.ssl.checkpoint, Split::Eval, Some(&lm_path)).unwrap();
    let applied = out.grid.as_ref().map(|g| g.best_weight);
    if applied != Some(grid.best_weight) {
        problems.push(format!("eval used weight {applied:?}, dev selected {}", grid.best_weight));
    }
    let lm = p.load_rnnlm(&lm_path).unwrap();
    let lw = p.config.decode.lm_weight;
    let nbest = read_nbest(&p.work_dir().join("nbest").join("ssl.eval.nbest"), lw).unwrap();
    let res = p.resources().unwrap();
    let refs: HashMap<String, Vec<String>> =
        res.entries(Split::Eval).into_iter().map(|e| (e.id, e.transcript)).collect();
    let recount: WerCounts = nbest
        .iter()
        .map(|(id, l)| {
            let r = rescore_nbest(l, &lm, grid.best_weight, p.config.rescore.mode, lw).unwrap();
            align_counts(&refs[id], r.best().map(|h| h.words.as_slice()).unwrap_or(&[]))
        })
        .sum();
    let row = out.rows.iter().find(|r| r.stage == "ssl+rescored").map(|r| r.counts);
    if row != Some(recount) {
        problems.push(format!("rescored eval row {row:?} != recomputed {recount:?}"));
    }

    // Weight 0 in replace mode drops both LM terms, leaving the first-pass
    // acoustic ranking; interpolate at 0 keeps the first-pass search ranking.
    let (mut acoustic_same, mut first_pass_same) = (0, 0);
    for (_, l) in &nbest {
        let mut by_acoustic = l.hypotheses.clone();
        by_acoustic.sort_by(|a, b| b.acoustic.total_cmp(&a.acoustic));
        let replaced = rescore_nbest(l, &lm, 0.0, RescoreMode::Replace, lw).unwrap();
        if ranking(&replaced) == by_acoustic.iter().map(|h| h.words.clone()).collect::<Vec<_>>() {
            acoustic_same += 1;
        }
        let interp = rescore_nbest(l, &lm, 0.0, RescoreMode::Interpolate, lw).unwrap();
        if ranking(&interp) == ranking(l) {
            first_pass_same += 1;
        }
    }
    if acoustic_same != nbest.len() || first_pass_same != nbest.len() {
        problems.push(format!(
            "w=0: replace matches acoustic ranking {acoustic_same}/{n}, interpolate matches first pass {first_pass_same}/{n}",
            n = nbest.len()
        ));
    }

    let sentence: Vec<String> = "kim tok sam".split(' ').map(String::from).collect();
    let (_, rep) = train_lm(&vec![sentence; 200], &RnnLmConfig::default(), 5).unwrap();
    let ppl = *rep.heldout_perplexity.last().unwrap();
    if ppl >= 1.5 {
        problems.push(format!("single-sentence held-out perplexity {ppl:.3}"));
    }
    let detail = format!(
        "{} grid rows, dev weight {} applied to eval ({} -> {}), w=0 rankings {}/{} lists, single-sentence ppl {ppl:.3}",
        grid.table.len(),
        grid.best_weight,
        out.rows[0].counts.wer(),
        recount.wer(),
        acoustic_same.min(first_pass_same),
        nbest.len(),
    );
    verdict(problems.is_empty(), if problems.is_empty() { detail } else { problems.join("; ") })
}

fn determinism() -> Verdict {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::from_toml(TINY).unwrap();
        cfg.paths.work_dir = dir.path().to_path_buf();
        let p = Pipeline::new(cfg).unwrap();
        let report: MetricsReport = p.run_all().unwrap();
        (std::fs::read(p.metrics_path()).unwrap(), report.rows.len())
    };
    let (a, rows) = run();
    let (b, _) = run();
    verdict(a == b && rows > 0, format!("{rows} metric rows, {} bytes, identical: {}", a.len(), a == b))
}

// -------------------------------------------------------------------- driver

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut lines: Vec<(&str, Verdict, bool)> = Vec::new();
    let mut timed = |name: &'static str, asserted: bool, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let line = format!(
            "{} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push((name, v, asserted));
    };
    timed("equation suite", true, &mut equations);
    timed("gradient suite", true, &mut gradients);
    timed("gradient suite, batch-norm trunks", false, &mut gradients_batch_norm);
    timed("direction isolation", true, &mut direction_isolation);
    timed("decoder oracle", true, &mut decoder_oracle);
    timed("chunk-context equivalence", true, &mut chunk_context);
    timed("corpus calibration", true, &mut corpus_calibration);

    let t = Instant::now();
    eprintln!("training desk-scale labs for seeds {SEEDS:?}");
    let labs: Vec<Lab> = SEEDS.iter().map(|&s| run_lab(s)).collect();
    eprintln!("  labs done [{:.0}s]", t.elapsed().as_secs_f64());
    timed("NSDL directional", false, &mut || nsdl_directional(&labs));
    timed("Bi-APC directional", false, &mut || biapc_directional(&labs));
    let (mechanics, outcome) = ssl_criterion(&labs);
    timed("SSL mechanics", true, &mut || verdict(mechanics.pass, mechanics.detail.clone()));
    timed("SSL dev outcome", false, &mut || verdict(outcome.pass, outcome.detail.clone()));
    timed("rescoring mechanics", true, &mut || rescoring(&labs[0]));
    timed("determinism", true, &mut determinism);

    let failed: Vec<&str> = lines.iter().filter(|(_, v, a)| *a && !v.pass).map(|(n, _, _)| *n).collect();
    let reported: Vec<&str> = lines.iter().filter(|(_, v, a)| !*a && !v.pass).map(|(n, _, _)| *n).collect();
    let met = lines.iter().filter(|(_, v, _)| v.pass).count();
    println!("{met}/{} criteria met", lines.len());
    if !reported.is_empty() {
        println!("reported shortfalls (not asserted): {}", reported.join(", "));
    }
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
