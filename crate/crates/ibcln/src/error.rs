//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

use crate::imaging::ColorSpace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("color space mismatch: expected {expected:?}, got {actual:?}")]
    ColorSpaceMismatch {
        expected: ColorSpace,
        actual: ColorSpace,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite pixel data: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for usage/validation problems,
    /// 2 for I/O and runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ColorSpaceMismatch { .. }
            | Error::ShapeMismatch(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Usage(_) => 1,
            Error::NonFinite(_)
            | Error::Dataset(_)
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Image(_)
            | Error::Tensor(_)
            | Error::Csv(_) => 2,
        }
    }
}
