use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input row. `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Data violates a cohort or visit invariant.
    #[error("data integrity error: {0}")]
    Integrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("model did not converge: {0}")]
    NonConvergence(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("sensitivity floor {floor} unreachable; maximum achievable sensitivity is {max_achievable}")]
    FloorUnreachable { floor: f64, max_achievable: f64 },

    /// Evaluation data overlaps the data a preprocessor was fitted on.
    #[error("leakage guard tripped: {0}")]
    Leakage(String),

    #[error("feature fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for validation/configuration problems, 3 for
    /// data-integrity problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::FloorUnreachable { .. }
            | Error::Fingerprint { .. }
            | Error::Shape(_)
            | Error::Json(_) => 2,
            Error::Parse { .. } | Error::Integrity(_) | Error::Leakage(_) => 3,
            _ => 1,
        }
    }
}
