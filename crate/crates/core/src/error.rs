use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector cannot be normalized")]
    ZeroNorm,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `e_min >= h_base`: the interpolation branch of the adaptive weight is undefined.
    #[error("degenerate entropy gate: e_min ({e_min}) >= h_base ({h_base})")]
    DegenerateGate { e_min: f64, h_base: f64 },

    #[error("loss normalizer is zero (no weighted anchor has a positive)")]
    ZeroNormalizer,

    #[error("backward called with a cache from a different parameter version")]
    StaleCache,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64, dump: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
