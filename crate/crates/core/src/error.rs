use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    /// A caller broke an API precondition (shape, length, id range).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("lexicon error: unknown word `{0}`")]
    UnknownWord(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("decode failure: no final node reachable after {frames} frames")]
    DecodeFailure { frames: usize },

    #[error("alignment failure: {frames} frames cannot cover a minimal path of {min_frames}")]
    AlignmentFailure { frames: usize, min_frames: usize },

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 4,
            Error::Config(_) | Error::Parameter(_) => 2,
            _ => 3,
        }
    }
}
