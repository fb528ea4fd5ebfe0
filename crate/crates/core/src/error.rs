use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: timestamp {timestamp} does not follow the previous row")]
    Ordering { line: u64, timestamp: String },

    #[error("line {line}: settled price {found} differs from {expected} earlier in the same quarter hour")]
    Consistency { line: u64, expected: f64, found: f64 },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("day {0} is not present in the price series")]
    UnknownDay(NaiveDate),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("infeasible constraints on state {state}: {detail}")]
    Infeasible { state: usize, detail: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
