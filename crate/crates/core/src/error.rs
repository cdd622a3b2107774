use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DsmError>;

#[derive(Debug, Error)]
pub enum DsmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("dataset inconsistency: {0}")]
    Consistency(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch: file is corrupted")]
    Corruption,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DsmError {
    /// Stable numeric code, shared with the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            DsmError::InvalidArgument(_) => 1,
            DsmError::ResourceLimit(_) => 2,
            DsmError::Shape(_) => 3,
            DsmError::NonFinite(_) => 4,
            DsmError::InvalidState(_) => 5,
            DsmError::Config(_) => 6,
            DsmError::Format(_) => 7,
            DsmError::Consistency(_) => 8,
            DsmError::Version { .. } => 9,
            DsmError::Corruption => 10,
            DsmError::Io(_) => 11,
        }
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DsmError::NonFinite(what.to_string()))
    }
}
