use std::io;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed a value outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration is internally inconsistent or incompatible with the data.
    #[error("configuration error: {0}")]
    Config(String),

    /// A piece does not fit into the configured page budget.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A file did not match the expected on-disk layout.
    #[error("format error: {0}")]
    Format(String),

    /// A re-run disagreed with the results it was supposed to reproduce.
    #[error("reproducibility failure: {0}")]
    Reproducibility(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

impl Error {
    /// True for errors caused by the caller's input rather than a defect.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Reproducibility(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
