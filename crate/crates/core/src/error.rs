use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid month `{0}` (expected YYYY-MM)")]
    BadMonth(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cholesky factorization failed after {attempts} jitter escalations")]
    Factorization { attempts: usize },

    #[error("optimizer failed on every start: {0}")]
    Divergence(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("training collapsed at epoch {epoch}: loss became non-finite")]
    Collapse { epoch: usize },

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
