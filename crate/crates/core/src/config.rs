//! Pipeline configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biapc::BiApcConfig;
use crate::corpus::CorpusConfig;
use crate::decoder::DecodeConfig;
use crate::error::{Error, Result};
use crate::frontend::{AugmentationSpec, FrontendConfig};
use crate::nnet::BlstmStackConfig;
use crate::nsdl::NsdlLossConfig;
use crate::rnnlm::{RescoreMode, RnnLmConfig};
use crate::ssl::SslConfig;
use crate::train::TrainConfig;

/// Base seeds for every random stream in the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub corpus: u64,
    pub init: u64,
    pub dropout: u64,
    pub augmentation: u64,
    pub lm: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 1,
            init: 2,
            dropout: 3,
            augmentation: 4,
            lm: 5,
        }
    }
}

impl Seeds {
    /// Applies `name=value`.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("seed override `{assignment}` is not KEY=VALUE")))?;
        let v: u64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("seed value `{v}` is not an unsigned integer")))?;
        let slot = match k.trim() {
            "corpus" => &mut self.corpus,
            "init" => &mut self.init,
            "dropout" => &mut self.dropout,
            "augmentation" => &mut self.augmentation,
            "lm" => &mut self.lm,
            other => return Err(Error::Config(format!("unknown seed `{other}`"))),
        };
        *slot = v;
        Ok(())
    }
}

/// Augmentation applied to each split outside the SSL schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub transcribed: AugmentationSpec,
    pub untranscribed: AugmentationSpec,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            transcribed: "3x SP".parse().expect("valid spec"),
            untranscribed: "3x SP".parse().expect("valid spec"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreConfig {
    pub mode: RescoreMode,
    pub grid: Vec<f64>,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        Self {
            mode: RescoreMode::Replace,
            grid: vec![0.25, 0.3, 0.35],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Root of every artifact; relative paths resolve against the config
    /// file's directory.
    pub work_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub frontend: FrontendConfig,
    pub model: BlstmStackConfig,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub nsdl: NsdlLossConfig,
    pub biapc: BiApcConfig,
    pub ssl: SslConfig,
    pub rnnlm: RnnLmConfig,
    pub rescore: RescoreConfig,
    pub decode: DecodeConfig,
    pub paths: PathsConfig,
    pub seeds: Seeds,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; a relative work dir is anchored
    /// at the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.paths.work_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.paths.work_dir = base.join(&cfg.paths.work_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.nsdl.validate()?;
        self.biapc.validate()?;
        self.ssl.validate()?;
        self.rnnlm.validate()?;
        self.decode.validate()?;
        if self.rescore.grid.is_empty() || self.rescore.grid.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("rescore grid must be non-empty and non-negative".into()));
        }
        if self.model.input_dim != 2 * self.frontend.n_mels {
            return Err(Error::Config(format!(
                "model input {} does not match paired {}-dim features",
                self.model.input_dim, self.frontend.n_mels
            )));
        }
        if self.frontend.sample_rate != self.corpus.sample_rate {
            return Err(Error::Config("frontend and corpus sample rates differ".into()));
        }
        Ok(())
    }

    /// SHA-256 of the key-sorted serialisation of everything but `paths`.
    pub fn digest(&self) -> String {
        let mut value = toml::Value::try_from(self).expect("config serialises");
        if let toml::Value::Table(t) = &mut value {
            t.remove("paths");
        }
        let canonical = canonical(&value);
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn canonical(v: &toml::Value) -> String {
    match v {
        toml::Value::Table(t) => {
            let mut keys: Vec<&String> = t.keys().collect();
            keys.sort();
            let parts: Vec<String> = keys.iter().map(|k| format!("{k:?}={}", canonical(&t[*k]))).collect();
            format!("{{{}}}", parts.join(","))
        }
        toml::Value::Array(a) => format!("[{}]", a.iter().map(canonical).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_digest() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        let mut other = cfg.clone();
        other.seeds.lm = 99;
        assert_ne!(other.digest(), cfg.digest());
        let mut moved = cfg.clone();
        moved.paths.work_dir = "/elsewhere".into();
        assert_eq!(moved.digest(), cfg.digest());
    }

    #[test]
    fn digest_ignores_key_order() {
        let a = "[seeds]\ncorpus = 7\nlm = 3\n[decode]\nlm_weight = 2.0\nnbest = 5\n";
        let b = "[decode]\nnbest = 5\nlm_weight = 2.0\n[seeds]\nlm = 3\ncorpus = 7\n";
        let (a, b) = (PipelineConfig::from_toml(a).unwrap(), PipelineConfig::from_toml(b).unwrap());
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.seeds.corpus, 7);
    }

    #[test]
    fn bad_configs() {
        assert!(matches!(PipelineConfig::from_toml("[bogus]\nx = 1\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[rescore]\ngrid = []\n"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("[ssl]\niterations = []\n").is_err());
        let mut s = Seeds::default();
        s.set("init=42").unwrap();
        assert_eq!(s.init, 42);
        assert!(s.set("nope=1").is_err());
        assert!(s.set("init").is_err());
        assert!(s.set("init=x").is_err());
    }
}
