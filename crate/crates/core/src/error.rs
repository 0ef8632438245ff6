use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("episode already finished; call reset first")]
    EpisodeFinished,

    #[error("invalid action code {0} (expected 0, 1 or 2)")]
    InvalidAction(i64),

    #[error("malformed {what} at line {line}: {msg}")]
    Format {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("scripted expert failed {failures} of {attempts} episodes; config and expert look mismatched")]
    ExpertMismatch { failures: usize, attempts: usize },

    #[error("trajectory config hash {found} does not match environment hash {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
