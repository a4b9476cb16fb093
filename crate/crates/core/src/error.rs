use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("decay reference time must be positive (got {0})")]
    DegenerateReference(f64),

    #[error("timestamp {t} exceeds the decay reference time {t_ref}")]
    AfterReference { t: f64, t_ref: f64 },

    #[error("{kind} index {index} out of range (size {size})")]
    Index {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("event timestamp {t} precedes the latest ingested timestamp {last}")]
    Ordering { t: f64, last: f64 },

    #[error("rank {k} exceeds min(rows, cols) = {max}")]
    Rank { k: usize, max: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("linear algebra solver failed: {0}")]
    Solver(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn index(kind: &'static str, index: usize, size: usize) -> Self {
        Error::Index { kind, index, size }
    }
}
