use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by who is at fault: `DimensionMismatch`,
/// `InvalidInput`, `Io`, `Image`, and `Format` describe bad data handed to an
/// operation, while `InvalidParam` describes a configuration value that
/// violates a documented invariant.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
