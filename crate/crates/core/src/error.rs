//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("mesh has no valid faces")]
    EmptyMesh,

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("not enough points: need {needed}, got {got} ({context})")]
    InsufficientPoints {
        needed: usize,
        got: usize,
        context: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("class {0} absent from training data")]
    ClassAbsent(usize),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
