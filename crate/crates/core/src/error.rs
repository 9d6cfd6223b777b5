use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The item cannot take part in an intervention and must be excluded.
    #[error("discarded item {id}: {reason}")]
    Discarded { id: String, reason: String },

    /// A transient failure talking to an external generator.
    #[error("retryable transport error: {0}")]
    Transport(String),

    #[error("pattern error: {0}")]
    Pattern(String),

    #[error("empty input: nothing to report")]
    EmptyReport,

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable class name, used by the CLI and the HTTP service.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Integrity(_) => "integrity",
            Error::Capacity(_) => "capacity",
            Error::Config(_) => "config",
            Error::Discarded { .. } => "discarded",
            Error::Transport(_) => "transport",
            Error::Pattern(_) => "pattern",
            Error::EmptyReport => "empty_report",
            Error::Format(_) => "format",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}
