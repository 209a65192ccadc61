use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive semidefinite (factorization failed)")]
    NotPositiveSemidefinite,

    #[error("matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("non-finite value at iteration {iteration}")]
    NonFinite { iteration: u64 },

    #[error("degenerate normalizer: trace of the second-moment matrix is zero")]
    DegenerateNormalizer,

    #[error("subsampling calibration failed: all {dropped} blocks had a zero normalizer")]
    CalibrationFailed { dropped: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("step schedule constant c = {c} is at or below the stability threshold {threshold}")]
    InvalidSchedule { c: f64, threshold: f64 },

    #[error("diagnostic undefined: {0}")]
    Diagnostic(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("experiment failed: {failed} of {total} replications failed (cap {cap})")]
    ExperimentFailed { failed: usize, total: usize, cap: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report format error: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse failure category, used by the CLI as its process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter { .. } | Error::InvalidSchedule { .. } => 2,
            Error::Io { .. } | Error::Report(_) => 3,
            Error::ExperimentFailed { .. } | Error::CalibrationFailed { .. } => 4,
            _ => 5,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
