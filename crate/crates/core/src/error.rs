use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("no unique solution: {0}")]
    NoUniqueSolution(String),

    #[error("insufficient history: have {have} frames, need at least {need}")]
    InsufficientHistory { have: usize, need: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("training diverged at step {step}: {msg}")]
    Training { step: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::InsufficientHistory { .. }
            | Error::Compatibility(_) => 3,
            Error::Dimension { .. }
            | Error::NonFinite { .. }
            | Error::Degenerate(_)
            | Error::NoUniqueSolution(_)
            | Error::Training { .. } => 4,
        }
    }
}
