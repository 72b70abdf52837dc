use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ALCK";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

/// Which training stage produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ce,
    Nsdl,
    Biapc,
    Rnnlm,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ce => "ce",
            Stage::Nsdl => "nsdl",
            Stage::Biapc => "biapc",
            Stage::Rnnlm => "rnnlm",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Stage::Ce),
            "nsdl" => Ok(Stage::Nsdl),
            "biapc" => Ok(Stage::Biapc),
            "rnnlm" => Ok(Stage::Rnnlm),
            other => Err(Error::Input(format!("unknown stage tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub digest: String,
    pub params: ParameterSet,
    pub optimizer: Option<ParameterSet>,
}

impl Checkpoint {
    /// Fails unless the checkpoint was written under `digest`.
    pub fn expect_digest(&self, digest: &str) -> Result<()> {
        if self.digest != digest {
            return Err(Error::Config(format!(
                "checkpoint digest {} does not match active config {}",
                short(&self.digest),
                short(digest)
            )));
        }
        Ok(())
    }

    pub fn expect_stage(&self, allowed: &[Stage]) -> Result<()> {
        if !allowed.contains(&self.stage) {
            return Err(Error::Input(format!(
                "checkpoint has stage `{}`, expected one of {allowed:?}",
                self.stage
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.stage.to_string());
        put_str(&mut out, &self.digest);
        put_set(&mut out, &self.params);
        match &self.optimizer {
            Some(o) => {
                out.push(1);
                put_set(&mut out, o);
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let stage = r.string()?.parse().map_err(|e: Error| e.to_string())?;
        let digest = r.string()?;
        let params = r.set()?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.set()?),
            f => return Err(format!("bad optimizer flag {f}")),
        };
        if r.pos != bytes.len() {
            return Err("trailing bytes".into());
        }
        Ok(Self {
            stage,
            digest,
            params,
            optimizer,
        })
    }
}

fn short(d: &str) -> &str {
    &d[..d.len().min(12)]
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_set(out: &mut Vec<u8>, set: &ParameterSet) {
    out.extend_from_slice(&(set.tensors.len() as u32).to_le_bytes());
    for (name, t) in &set.tensors {
        put_str(out, name);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.push(DTYPE_F64);
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid utf-8".to_string())
    }

    fn set(&mut self) -> std::result::Result<ParameterSet, String> {
        let n = self.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let name = self.string()?;
            let nd = self.u32()? as usize;
            let shape = (0..nd)
                .map(|_| self.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if self.take(1)?[0] != DTYPE_F64 {
                return Err(format!("tensor `{name}` has unsupported dtype"));
            }
            let count: usize = shape.iter().product();
            let raw = self.take(count.checked_mul(8).ok_or("tensor too large")?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, values).map_err(|e| format!("tensor `{name}`: {e}"))?;
            tensors.push((name, t));
        }
        Ok(ParameterSet { tensors })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Input(format!("checkpoint {} not found", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    Checkpoint::from_bytes(&bytes).map_err(|m| Error::format(path, m))
}
