use std::io;

use thiserror::Error;

use crate::network::TrainHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Non-finite loss during training. Carries the history recorded so far.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        history: Box<TrainHistory>,
    },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    /// Every problem found while validating a run configuration, each
    /// prefixed with its config path.
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),

    #[error("load error: {}", .0.join("; "))]
    Load(Vec<String>),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
