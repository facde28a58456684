use thiserror::Error;

/// Errors shared across the simulation crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("truncation breach: total mass {mass} reached {threshold} (0.95 * u_max = 0.95 * {u_max})")]
    TruncationBreach { mass: f64, threshold: f64, u_max: f64 },
    #[error("non-finite value detected in {0}")]
    NonFinite(&'static str),
    #[error("{fraction:.4} of replicas aborted (> 0.01): first abort: {first}")]
    TooManyAborts { fraction: f64, first: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
