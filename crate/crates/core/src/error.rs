use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("singular point: {0}")]
    Singular(String),
    #[error("malformed container: {0}")]
    Format(String),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("container checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected {expected}, got {got}"
        )));
    }
    Ok(())
}
