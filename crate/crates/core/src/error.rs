//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    /// An API precondition was violated (non-scalar loss, out-of-range epoch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration (bad key, missing field, inconsistent values).
    #[error("config error: {0}")]
    Config(String),

    /// A value became non-finite where the contract requires finiteness.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// On-disk artifact has a bad magic, version, or is truncated.
    #[error("format error: {0}")]
    Format(String),

    /// Checksum mismatch on a stored payload.
    #[error("corruption detected: {0}")]
    Corruption(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
