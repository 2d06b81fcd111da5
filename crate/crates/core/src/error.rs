use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: needed {needed} bytes, found {found}")]
    Length { needed: usize, found: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Corruption { stored: u32, computed: u32 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}, step {step}")]
    Diverged {
        epoch: usize,
        batch: usize,
        step: usize,
    },

    #[error("resource limit at step {step}: {message}")]
    Resource { step: usize, message: String },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
