use thiserror::Error;

/// Errors produced by the simulation and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("simulation blew up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
