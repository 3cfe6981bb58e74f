use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, mode).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("no valid labeling exists for this label matrix")]
    NoValidLabeling,

    #[error("n = {n} exceeds the exact enumeration cap of {cap}")]
    EnumerationCap { n: usize, cap: usize },

    #[error("valid set too sparse: {accepted} accepted after {draws} draws")]
    TooSparse { draws: u64, accepted: usize },

    #[error("rejection sampling gave up after {shapes} shapes ({attempts} attempts)")]
    GenerationExhausted { shapes: usize, attempts: u64 },

    #[error("empty label matrix: no non-abstain entries")]
    EmptyMatrix,

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("model format version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("model shape mismatch: {0}")]
    ModelShape(String),

    #[error("corrupt model file: {0}")]
    ModelCorrupt(String),

    #[error("training diverged in every run")]
    AllRunsDiverged { reports: Vec<crate::trainer::RunReport> },

    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
