use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
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

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: String, row: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate question embedding (norm {norm:e} <= guard {guard:e})")]
    DegenerateQuestion { norm: f64, guard: f64 },

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("unknown id: {0}")]
    Lookup(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    /// Errors caused by bad parameters rather than bad input data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
