//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a mathematical precondition (e.g. non-positive temperature).
    #[error("domain error: {0}")]
    Domain(String),

    /// The simulation or training produced a non-finite or physically
    /// impossible value. Carries enough context to locate the failing step.
    #[error("simulation fault: {0}")]
    Fault(String),

    /// A vector or matrix had the wrong length for the operation.
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Sampling was requested before the replay buffer finished warming up.
    #[error("replay buffer underfull: have {have} transitions, need {need}")]
    BufferUnderfull { have: usize, need: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn fault(msg: impl Into<String>) -> Self {
        Error::Fault(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
