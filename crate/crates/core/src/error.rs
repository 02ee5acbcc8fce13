use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulated environments.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("non-finite {what} at t={t}")]
    NonFinite { what: &'static str, t: usize },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("environment `{0}` has no unmodeled parameters; use the vanilla setting")]
    NoUnmodeled(String),
}

/// Errors raised by the optimizers and distribution utilities.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("kernel matrix not positive definite even with jitter {jitter:e}")]
    IllConditioned { jitter: f64 },
    #[error("variance must be strictly positive, got {0}")]
    NonPositiveVariance(f64),
}

/// Top-level error type of the benchmark library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("method `{method}` failed: {reason}")]
    Method { method: String, reason: String },
    #[error("transition budget exceeded by `{method}`: used {used}, budget {budget}")]
    Budget {
        method: String,
        used: usize,
        budget: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
