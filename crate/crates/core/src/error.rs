use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented constraint (non-unit axis, n·l ≠ 0, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data is malformed, missing or inconsistent.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// RANSAC or the trajectory fit could not find a model with enough support.
    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("empty segmentation: {0}")]
    EmptySegmentation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::FitFailure(_) => 3,
            Error::DegenerateGeometry(_) | Error::EmptySegmentation(_) => 4,
            _ => 2,
        }
    }
}
