use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument, shape or attribute index.
    #[error("domain error: {0}")]
    Domain(String),

    /// NaN/Inf encountered where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A training stage did not reach its target.
    #[error("training failure: {0}")]
    Training(String),

    /// Degenerate statistical test (e.g. zero variance in both samples).
    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    /// Corrupt, truncated or hash-mismatched artifact.
    #[error("integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for `Err(Error::Domain(..))`.
macro_rules! domain_err {
    ($($arg:tt)*) => {
        Err($crate::error::Error::Domain(format!($($arg)*)))
    };
}
pub(crate) use domain_err;

impl Error {
    pub(crate) fn integrity(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 stage failure, 4 integrity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Integrity { .. } => 4,
            Error::Stage { source, .. } => match source.as_ref() {
                Error::Integrity { .. } => 4,
                Error::Config(_) => 2,
                _ => 3,
            },
            _ => 3,
        }
    }
}
