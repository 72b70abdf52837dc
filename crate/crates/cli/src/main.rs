use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asrlab::config::PipelineConfig;
use asrlab::corpus::Split;
use asrlab::model::LossKind;
use asrlab::pipeline::{consolidate, Init, MetricsReport, Pipeline};
use asrlab::{Error, Result};
use clap::{Parser, Subcommand};

/// Hybrid HMM-BLSTM acoustic modelling lab.
#[derive(Debug, Parser)]
#[command(name = "asrlab", version)]
struct Cli {
    /// Pipeline config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Replace a named seed, e.g. `init=7`. Repeatable.
    #[arg(long = "seed-override", value_name = "K=V", global = true)]
    seed_override: Vec<String>,

    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Move speech-free transcribed utterances to the noise pool.
    Prepare,
    /// Bi-APC pretraining on the untranscribed split.
    Pretrain,
    /// Train an acoustic model on the transcribed split.
    Train {
        #[arg(long, default_value = "nsdl", value_parser = parse_loss)]
        loss: LossKind,
        /// `random` or `biapc:PATH`.
        #[arg(long, default_value = "random", value_parser = parse_init)]
        init: Init,
        /// Model name; derived from loss and init by default.
        #[arg(long)]
        name: Option<String>,
    },
    /// Incremental semi-supervised training from a trained model.
    Ssl {
        #[arg(long)]
        init: PathBuf,
    },
    /// Score a model on a split, optionally with RNNLM rescoring.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_split)]
        split: Split,
        /// Recurrent LM checkpoint.
        #[arg(long)]
        rescore: Option<PathBuf>,
    },
    /// Train the recurrent LM if needed and search the rescoring weight on dev.
    RescoreGrid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Existing LM checkpoint; trained into the work dir when omitted.
        #[arg(long)]
        lm: Option<PathBuf>,
    },
    /// Consolidated comparison table of one or more metrics files.
    Report { paths: Vec<PathBuf> },
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_init(s: &str) -> std::result::Result<Init, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => {
            return Err(Error::Input(format!("config {} not found", p.display())))
        }
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.seed_override {
        cfg.seeds.set(o)?;
    }
    Ok(cfg)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Input(format!("{} not found", path.display())))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let mut pipeline = Pipeline::new(load_config(&cli)?)?;
    pipeline.force = cli.force;
    match cli.command {
        Command::Synth => {
            if pipeline.synth()? {
                println!("corpus written to {}", pipeline.corpus_dir().display());
            } else {
                println!("skipped, up to date");
            }
        }
        Command::Prepare => {
            let (kept, removed) = pipeline.prepare()?;
            println!("{kept} utterances kept, {removed} moved to the noise pool");
        }
        Command::Pretrain => {
            let (path, curve) = pipeline.pretrain()?;
            println!("{} (final loss {:.4})", path.display(), curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::Train { loss, init, name } => {
            let out = pipeline.train(loss, &init, name.as_deref())?;
            println!("{}: dev WER {:.2} -> {}", out.name, out.dev.wer(), out.checkpoint.display());
        }
        Command::Ssl { init } => {
            require(&init)?;
            let out = pipeline.ssl(&init)?;
            println!("{}", asrlab::ssl::SslReport::CSV_HEADER);
            for r in &out.reports {
                println!("{}", r.to_csv());
            }
            println!(
                "dev WER {:.2} -> {:.2}; best model {}",
                out.initial_dev.wer(),
                out.best_dev.wer(),
                out.checkpoint.display()
            );
        }
        Command::Evaluate { checkpoint, split, rescore } => {
            let out = pipeline.evaluate(&checkpoint, split, rescore.as_deref())?;
            if let Some(g) = &out.grid {
                eprintln!("dev-selected LM weight {}", g.best_weight);
            }
            print!("{}", MetricsReport { rows: out.rows }.to_csv());
        }
        Command::RescoreGrid { checkpoint, lm } => {
            require(&checkpoint)?;
            let lm = match lm {
                Some(p) => p,
                None if pipeline.lm_path().exists() && !pipeline.force => pipeline.lm_path(),
                None => pipeline.train_rnnlm()?.0,
            };
            let g = pipeline.rescore_grid(&checkpoint, &lm)?;
            print!("{}", g.to_csv());
            eprintln!("selected weight {}", g.best_weight);
        }
        Command::Report { paths } => {
            let paths = if paths.is_empty() { vec![pipeline.metrics_path()] } else { paths };
            let reports = paths
                .iter()
                .map(|p| {
                    require(p)?;
                    MetricsReport::load(p)
                })
                .collect::<Result<Vec<_>>>()?;
            print!("{}", consolidate(&reports).to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
