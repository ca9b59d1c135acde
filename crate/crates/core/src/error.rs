use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sequence too short: {0}")]
    Length(String),

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("invalid layer state: {0}")]
    State(String),

    #[error("model configuration is invalid:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("unknown preset `{0}` (expected one of: mnist, ecg, mosfet)")]
    UnknownPreset(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by input data or the file system rather
    /// than by configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Io { .. }
                | Error::Version { .. }
                | Error::Length(_)
                | Error::EmptySequence(_)
                | Error::ShapeMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
