//! End-to-end stages over an on-disk work directory. The command-line tool
//! is a thin shell over these functions.

mod report;

use std::fs;
use std::path::{Path, PathBuf};

use crate::biapc::{self, BiApcModel};
use crate::config::PipelineConfig;
use crate::corpus::{generate_corpus, split_nonspeech_utterances, CorpusManifest, ManifestEntry, Split};
use crate::data::{feature_items, labelled_examples, noise_pool, read_sentences, state_counts, DiskCorpus};
use crate::decoder::{build_graph, write_nbest, BigramLm, DecodingGraph, Lexicon, NBestList, WerCounts};
use crate::error::{Error, Result};
use crate::frontend::{AugmentationSpec, NoisePool};
use crate::inventory::StateInventory;
use crate::model::{AcousticModel, LossKind};
use crate::nnet::{read_checkpoint, write_checkpoint};
use crate::recognize::{EvalSet, Recognizer};
use crate::rnnlm::{grid_search, rescore_nbest, train_lm, GridResult, RnnLm, Vocab};
use crate::seed;
use crate::ssl::{run_iteration, write_pseudo_labels, SslContext, SslReport, SslState};
use crate::train::{train_acoustic, LossRow, TrainConfig, TrainReport};

pub use report::{consolidate, MetricsReport, MetricsRow, METRICS_HEADER, STAGE_ORDER};

/// Acoustic model initialisation for `train`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Init {
    Random,
    Biapc(PathBuf),
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "random" => Ok(Init::Random),
            Some(("biapc", p)) if !p.is_empty() => Ok(Init::Biapc(p.into())),
            _ => Err(Error::Config(format!("init must be `random` or `biapc:PATH`, got `{s}`"))),
        }
    }
}

/// Name of the model a (loss, init) pair produces, e.g. `nsdl+biapc`.
pub fn stage_name(loss: LossKind, init: &Init) -> String {
    match init {
        Init::Random => loss.to_string(),
        Init::Biapc(_) => format!("{loss}+biapc"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub name: String,
    pub checkpoint: PathBuf,
    pub dev: WerCounts,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslOutcome {
    pub checkpoint: PathBuf,
    pub initial_dev: WerCounts,
    pub best_dev: WerCounts,
    pub best_iteration: Option<usize>,
    pub reports: Vec<SslReport>,
    pub aborted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub rows: Vec<MetricsRow>,
    pub grid: Option<GridResult>,
}

/// Everything decoding needs that does not depend on a model.
pub struct Resources {
    pub store: DiskCorpus,
    pub manifest: CorpusManifest,
    pub noise_entries: Vec<ManifestEntry>,
    pub noise: NoisePool,
    pub inventory: StateInventory,
    pub lexicon: Lexicon,
    pub bigram: BigramLm,
    pub graph: DecodingGraph,
    pub written: Vec<Vec<String>>,
}

impl Resources {
    pub fn entries(&self, split: Split) -> Vec<ManifestEntry> {
        self.manifest.split(split)
    }

    pub fn lm_text(&self) -> Vec<Vec<String>> {
        lm_text(&self.manifest, &self.written)
    }
}

/// LM training text: transcripts of the transcribed split plus the written
/// sentences.
fn lm_text(manifest: &CorpusManifest, written: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut text: Vec<Vec<String>> = manifest
        .split(Split::TranscribedTrain)
        .into_iter()
        .map(|e| e.transcript)
        .collect();
    text.extend(written.iter().cloned());
    text
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub digest: String,
    /// Overwrite finished artifacts instead of refusing.
    pub force: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let digest = config.digest();
        Ok(Self {
            config,
            digest,
            force: false,
        })
    }

    pub fn work_dir(&self) -> &Path {
        &self.config.paths.work_dir
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.work_dir().join("corpus")
    }

    pub fn prepared_manifest(&self) -> PathBuf {
        self.work_dir().join("prepared").join("manifest.tsv")
    }

    pub fn noise_manifest(&self) -> PathBuf {
        self.work_dir().join("prepared").join("noise.tsv")
    }

    pub fn model_path(&self, name: &str) -> PathBuf {
        self.work_dir().join("models").join(format!("{name}.ckpt"))
    }

    pub fn log_path(&self, name: &str) -> PathBuf {
        self.work_dir().join("logs").join(format!("{name}.csv"))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.work_dir().join("reports").join("metrics.csv")
    }

    pub fn lm_path(&self) -> PathBuf {
        self.work_dir().join("lm").join("rnnlm.ckpt")
    }

    fn vocab_path(lm: &Path) -> PathBuf {
        lm.with_extension("vocab")
    }

    fn corpus_digest(&self) -> String {
        self.config.corpus.digest(self.config.seeds.corpus)
    }

    /// Creates the parent directory of `path` and refuses to replace an
    /// existing file unless forced.
    fn claim(&self, path: &Path) -> Result<()> {
        if path.exists() && !self.force {
            return Err(Error::Input(format!(
                "{} exists; pass --force to overwrite",
                path.display()
            )));
        }
        ensure_parent(path)
    }

    fn record(&self, rows: &[(String, String, WerCounts, usize)]) -> Result<Vec<MetricsRow>> {
        let path = self.metrics_path();
        ensure_parent(&path)?;
        let mut report = MetricsReport::load(&path)?;
        for (stage, split, counts, n) in rows {
            report.upsert(stage, split, *counts, *n);
        }
        report.save(&path)?;
        Ok(rows
            .iter()
            .filter_map(|(stage, split, ..)| report.get(stage, split).cloned())
            .collect())
    }

    /// Writes the synthetic corpus; returns false when an up-to-date one
    /// is already there.
    pub fn synth(&self) -> Result<bool> {
        let dir = self.corpus_dir();
        let manifest = dir.join("manifest.tsv");
        if !self.force && manifest.exists() {
            let m = CorpusManifest::read(&manifest)?;
            if m.digest == self.corpus_digest() && m.seed == self.config.seeds.corpus {
                log::info!("corpus skipped, up to date");
                return Ok(false);
            }
        }
        let corpus = generate_corpus(&self.config.corpus, self.config.seeds.corpus)?;
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        corpus.write(&dir)?;
        log::info!("corpus written to {}", dir.display());
        Ok(true)
    }

    fn corpus_manifest(&self) -> Result<CorpusManifest> {
        let path = self.corpus_dir().join("manifest.tsv");
        if !path.exists() {
            return Err(Error::Input(format!("{} missing; run `synth` first", path.display())));
        }
        let m = CorpusManifest::read(&path)?;
        if m.digest != self.corpus_digest() {
            return Err(Error::Config(format!(
                "{} was generated under a different corpus config or seed",
                path.display()
            )));
        }
        Ok(m)
    }

    /// Moves speech-free transcribed utterances into the noise list.
    pub fn prepare(&self) -> Result<(usize, usize)> {
        let m = self.corpus_manifest()?;
        let (kept, removed) = split_nonspeech_utterances(&m);
        let out = self.prepared_manifest();
        ensure_parent(&out)?;
        kept.write(&out)?;
        CorpusManifest {
            entries: removed.clone(),
            seed: m.seed,
            digest: m.digest.clone(),
        }
        .write(&self.noise_manifest())?;
        log::info!(
            "prepared: {} utterances kept, {} non-speech utterances moved to the noise pool",
            kept.entries.len(),
            removed.len()
        );
        Ok((kept.entries.len(), removed.len()))
    }

    /// Loads the prepared corpus and builds the decoding graph.
    pub fn resources(&self) -> Result<Resources> {
        let path = self.prepared_manifest();
        if !path.exists() {
            return Err(Error::Input(format!("{} missing; run `prepare` first", path.display())));
        }
        let manifest = CorpusManifest::read(&path)?;
        let noise_entries = CorpusManifest::read(&self.noise_manifest())?.entries;
        if manifest.digest != self.corpus_digest() {
            return Err(Error::Config(format!(
                "{} is stale; rerun `synth` and `prepare`",
                path.display()
            )));
        }
        let store = DiskCorpus::new(self.corpus_dir());
        let noise = noise_pool(&store, &noise_entries)?;
        let inventory = self.config.corpus.inventory();
        let lexicon = Lexicon::from_corpus(&self.config.corpus)?;
        let written = read_sentences(&self.corpus_dir().join("written.txt"))?;
        let bigram = BigramLm::train(lexicon.words(), &lm_text(&manifest, &written), self.config.decode.lm_discount)?;
        let graph = build_graph(&lexicon, &bigram, &inventory, &self.config.decode)?;
        Ok(Resources {
            store,
            manifest,
            noise_entries,
            noise,
            inventory,
            lexicon,
            bigram,
            graph,
            written,
        })
    }

    /// Unperturbed features and references of one split.
    pub fn eval_set(&self, res: &Resources, split: Split) -> Result<EvalSet> {
        let entries = res.entries(split);
        let items = feature_items(
            &res.store,
            &entries,
            &AugmentationSpec::none(),
            &res.noise,
            &self.config.frontend,
            0,
        )?;
        Ok(EvalSet {
            ids: items.iter().map(|i| i.id.clone()).collect(),
            references: entries.iter().map(|e| e.transcript.clone()).collect(),
            features: items.into_iter().map(|i| i.features).collect(),
        })
    }

    pub fn load_acoustic(&self, path: &Path) -> Result<AcousticModel> {
        let ck = read_checkpoint(path)?;
        AcousticModel::from_checkpoint(&ck, &self.config.model, &self.config.corpus.inventory(), &self.digest)
    }

    /// Bi-APC pretraining on the augmented untranscribed split.
    pub fn pretrain(&self) -> Result<(PathBuf, Vec<f64>)> {
        let out = self.model_path("biapc");
        self.claim(&out)?;
        let res = self.resources()?;
        let items = feature_items(
            &res.store,
            &res.entries(Split::UntranscribedTrain),
            &self.config.augmentation.untranscribed,
            &res.noise,
            &self.config.frontend,
            seed::derive(self.config.seeds.augmentation, "biapc", 0),
        )?;
        let data: Vec<_> = items.into_iter().map(|i| i.features).collect();
        let seed = seed::derive(self.config.seeds.init, "biapc", 0);
        let (model, curve) = biapc::pretrain(&data, &self.config.model, &self.config.biapc, seed)?;
        write_checkpoint(&out, &model.to_checkpoint(&self.digest))?;
        let log: String = std::iter::once("epoch,loss\n".to_string())
            .chain(curve.iter().enumerate().map(|(e, l)| format!("{e},{l:.6}\n")))
            .collect();
        write_text(&self.log_path("biapc"), &log)?;
        Ok((out, curve))
    }

    /// A freshly initialised acoustic model, optionally with a pretrained
    /// trunk.
    pub fn initial_model(&self, loss: LossKind, init: &Init) -> Result<AcousticModel> {
        let inv = self.config.corpus.inventory();
        let mut rng = seed::rng(self.config.seeds.init, "acoustic", 0);
        let mut model = AcousticModel::new(&self.config.model, &inv, loss, &mut rng)?;
        if let Init::Biapc(path) = init {
            if !path.exists() {
                return Err(Error::Input(format!("pretrained checkpoint {} missing", path.display())));
            }
            let pre = BiApcModel::from_checkpoint(&read_checkpoint(path)?, &self.config.model, &self.digest)?;
            biapc::transfer(&pre, &mut model)?;
        }
        Ok(model)
    }

    /// Supervised training on the augmented transcribed split, with dev
    /// scoring per `train.dev_every`.
    pub fn train(&self, loss: LossKind, init: &Init, name: Option<&str>) -> Result<TrainOutcome> {
        let name = name.map_or_else(|| stage_name(loss, init), str::to_string);
        let out = self.model_path(&name);
        self.claim(&out)?;
        if let Init::Biapc(p) = init {
            if !p.exists() {
                return Err(Error::Input(format!("pretrained checkpoint {} missing", p.display())));
            }
        }
        let res = self.resources()?;
        let mut model = self.initial_model(loss, init)?;
        let data = labelled_examples(
            &res.store,
            &res.entries(Split::TranscribedTrain),
            &self.config.augmentation.transcribed,
            &res.noise,
            &self.config.frontend,
            self.config.seeds.augmentation,
        )?;
        model.set_priors_from_counts(&state_counts(&data, res.inventory.len()))?;
        let dev = self.eval_set(&res, Split::Dev)?;
        let cfg = &self.config.train;
        let mut rows = Vec::new();
        let mut last_dev = None;
        let report = train_acoustic(
            &mut model,
            &data,
            cfg,
            &self.config.nsdl,
            self.config.seeds.dropout,
            &mut |epoch, m| {
                let last = epoch + 1 == cfg.epochs;
                if last || (cfg.dev_every > 0 && (epoch + 1) % cfg.dev_every == 0) {
                    let counts = Recognizer::new(m, &res.graph, &self.config.decode).score_set(&dev)?;
                    log::info!("{name} epoch {epoch}: dev WER {:.2}", counts.wer());
                    rows.push((format!("{name}@{epoch}"), "dev".to_string(), counts, dev.len()));
                    last_dev = Some(counts);
                }
                Ok(())
            },
        )?;
        let dev_counts = last_dev.expect("final epoch is scored");
        rows.push((name.clone(), "dev".to_string(), dev_counts, dev.len()));
        write_checkpoint(&out, &model.to_checkpoint(&self.digest))?;
        write_text(&self.log_path(&name), &loss_log(&report.rows))?;
        self.record(&rows)?;
        Ok(TrainOutcome {
            name,
            checkpoint: out,
            dev: dev_counts,
            report,
        })
    }

    /// Runs the SSL schedule starting from `init`.
    pub fn ssl(&self, init: &Path) -> Result<SslOutcome> {
        let out = self.model_path("ssl");
        self.claim(&out)?;
        if !init.exists() {
            return Err(Error::Input(format!("checkpoint {} missing", init.display())));
        }
        let res = self.resources()?;
        let start = self.load_acoustic(init)?;
        let pool = feature_items(
            &res.store,
            &res.entries(Split::UntranscribedTrain),
            &AugmentationSpec::none(),
            &res.noise,
            &self.config.frontend,
            0,
        )?;
        let dev = self.eval_set(&res, Split::Dev)?;
        let transcribed = res.entries(Split::TranscribedTrain);
        let train = TrainConfig {
            epochs: self.config.ssl.epochs.unwrap_or(self.config.train.epochs),
            ..self.config.train.clone()
        };
        let ctx = SslContext {
            store: &res.store,
            transcribed: &transcribed,
            pool: &pool,
            dev: &dev,
            graph: &res.graph,
            decode: &self.config.decode,
            noise: &res.noise,
            frontend: &self.config.frontend,
            train: &train,
            loss: &self.config.nsdl,
            init: &start,
            warm_start: self.config.ssl.warm_start,
            augment_seed: self.config.seeds.augmentation,
            train_seed: self.config.seeds.dropout,
        };
        let mut state = SslState::new(start.clone(), &ctx)?;
        let initial_dev = state.best_dev;
        let mut rows = Vec::new();
        for (i, it) in self.config.ssl.iterations.iter().enumerate() {
            let index = i + 1;
            state = run_iteration(state, index, it, &ctx)?;
            if let Some(r) = state.reports.last().filter(|r| r.iteration == index) {
                rows.push((format!("ssl-iter{index}"), "dev".to_string(), r.dev, dev.len()));
                let accepted: Vec<_> = state.accepted.iter().filter(|a| a.iteration == index).cloned().collect();
                let p = self.work_dir().join("ssl").join(format!("iter{index}.pseudo.tsv"));
                ensure_parent(&p)?;
                write_pseudo_labels(&p, &accepted)?;
            }
        }
        rows.push(("ssl".to_string(), "dev".to_string(), state.best_dev, dev.len()));
        write_checkpoint(&out, &state.best.to_checkpoint(&self.digest))?;
        let csv: String = std::iter::once(format!("{}\n", SslReport::CSV_HEADER))
            .chain(state.reports.iter().map(|r| r.to_csv() + "\n"))
            .collect();
        write_text(&self.log_path("ssl"), &csv)?;
        self.record(&rows)?;
        Ok(SslOutcome {
            checkpoint: out,
            initial_dev,
            best_dev: state.best_dev,
            best_iteration: state.best_iteration,
            reports: state.reports,
            aborted: state.aborted,
        })
    }

    /// Trains the recurrent LM on transcripts plus written text.
    pub fn train_rnnlm(&self) -> Result<(PathBuf, Vec<f64>)> {
        let out = self.lm_path();
        self.claim(&out)?;
        let res = self.resources()?;
        let (lm, report) = train_lm(&res.lm_text(), &self.config.rnnlm, self.config.seeds.lm)?;
        write_checkpoint(&out, &lm.to_checkpoint(&self.digest))?;
        lm.vocab.write(&Self::vocab_path(&out))?;
        let log: String = std::iter::once("epoch,train_perplexity,heldout_perplexity\n".to_string())
            .chain(
                report
                    .train_perplexity
                    .iter()
                    .zip(&report.heldout_perplexity)
                    .enumerate()
                    .map(|(e, (t, h))| format!("{e},{t:.4},{h:.4}\n")),
            )
            .collect();
        write_text(&self.log_path("rnnlm"), &log)?;
        Ok((out, report.heldout_perplexity))
    }

    pub fn load_rnnlm(&self, path: &Path) -> Result<RnnLm> {
        let ck = read_checkpoint(path)?;
        let vocab = Vocab::read(&Self::vocab_path(path))?;
        RnnLm::from_checkpoint(&ck, vocab, &self.config.rnnlm, &self.digest)
    }

    fn nbest_lists(&self, res: &Resources, model: &AcousticModel, set: &EvalSet) -> Result<Vec<NBestList>> {
        let rec = Recognizer::new(model, &res.graph, &self.config.decode);
        rec.decode_all(set.items(), self.config.decode.nbest)
            .into_iter()
            .zip(&set.ids)
            .map(|(d, id)| match d {
                Ok(d) => Ok(d.nbest),
                Err(e @ Error::DecodeFailure { .. }) => {
                    log::warn!("`{id}`: {e}");
                    Ok(NBestList::default())
                }
                Err(e) => Err(e),
            })
            .collect()
    }

    /// Dev-set weight search for rescoring the N-best output of `checkpoint`.
    pub fn rescore_grid(&self, checkpoint: &Path, lm: &Path) -> Result<GridResult> {
        let res = self.resources()?;
        let model = self.load_acoustic(checkpoint)?;
        let lm = self.load_rnnlm(lm)?;
        let dev = self.eval_set(&res, Split::Dev)?;
        let lists = self.nbest_lists(&res, &model, &dev)?;
        let grid = self.grid(&lists, &dev, &lm)?;
        let stem = stem(checkpoint);
        write_text(&self.work_dir().join("reports").join(format!("{stem}.grid.csv")), &grid.to_csv())?;
        Ok(grid)
    }

    fn grid(&self, lists: &[NBestList], dev: &EvalSet, lm: &RnnLm) -> Result<GridResult> {
        let r = &self.config.rescore;
        grid_search(lists, &dev.references, lm, &r.grid, r.mode, self.config.decode.lm_weight)
    }

    /// First-pass WER of `checkpoint` on `split`; with an LM, also the WER
    /// after rescoring at the dev-selected weight.
    pub fn evaluate(&self, checkpoint: &Path, split: Split, rescore: Option<&Path>) -> Result<EvalOutcome> {
        for p in std::iter::once(checkpoint).chain(rescore) {
            if !p.exists() {
                return Err(Error::Input(format!("{} missing", p.display())));
            }
        }
        let res = self.resources()?;
        let model = self.load_acoustic(checkpoint)?;
        let stem = stem(checkpoint);
        let set = self.eval_set(&res, split)?;
        let lists = self.nbest_lists(&res, &model, &set)?;
        let named: Vec<(String, NBestList)> = set.ids.iter().cloned().zip(lists.iter().cloned()).collect();
        write_nbest(
            &self.work_dir().join("nbest").join(format!("{stem}.{split}.nbest")),
            &self.digest,
            &named,
        )?;
        let first = corpus_counts(&lists, &set.references);
        let mut rows = vec![(stem.clone(), split.to_string(), first, set.len())];
        let mut grid = None;
        if let Some(lm_path) = rescore {
            let lm = self.load_rnnlm(lm_path)?;
            let dev = self.eval_set(&res, Split::Dev)?;
            let dev_lists = if split == Split::Dev {
                lists.clone()
            } else {
                self.nbest_lists(&res, &model, &dev)?
            };
            let g = self.grid(&dev_lists, &dev, &lm)?;
            let mode = self.config.rescore.mode;
            let lw = self.config.decode.lm_weight;
            let rescored = lists
                .iter()
                .map(|l| rescore_nbest(l, &lm, g.best_weight, mode, lw))
                .collect::<Result<Vec<_>>>()?;
            rows.push((
                format!("{stem}+rescored"),
                split.to_string(),
                corpus_counts(&rescored, &set.references),
                set.len(),
            ));
            grid = Some(g);
        }
        let rows = self.record(&rows)?;
        Ok(EvalOutcome { rows, grid })
    }

    /// Every stage in order: corpus, Bi-APC, CE and NSDL baselines,
    /// NSDL with Bi-APC, SSL on top of it, RNNLM, final evaluation.
    pub fn run_all(&self) -> Result<MetricsReport> {
        self.synth()?;
        self.prepare()?;
        let (biapc, _) = self.pretrain()?;
        self.train(LossKind::Ce, &Init::Random, None)?;
        self.train(LossKind::Nsdl, &Init::Random, None)?;
        let tuned = self.train(LossKind::Nsdl, &Init::Biapc(biapc), None)?;
        let ssl = self.ssl(&tuned.checkpoint)?;
        let (lm, _) = self.train_rnnlm()?;
        self.evaluate(&ssl.checkpoint, Split::Eval, Some(&lm))?;
        MetricsReport::load(&self.metrics_path())
    }
}

fn corpus_counts(lists: &[NBestList], references: &[Vec<String>]) -> WerCounts {
    lists
        .iter()
        .zip(references)
        .map(|(l, r)| {
            let hyp = l.best().map(|h| h.words.as_slice()).unwrap_or(&[]);
            crate::decoder::align_counts(r, hyp)
        })
        .sum()
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn loss_log(rows: &[LossRow]) -> String {
    let mut out = format!("{}\n", LossRow::CSV_HEADER);
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}
