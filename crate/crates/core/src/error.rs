use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad layer dimensions, unsatisfiable topology, bad config keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data has the wrong shape or content.
    #[error("input error: {0}")]
    Input(String),

    /// A file could not be parsed.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// AUC is undefined when only one class is present.
    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    /// Hanley-McNeil variance is degenerate at theta in {0, 1}.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    /// Internal shape invariant violated.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    /// True for errors caused by numerical divergence during training.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
