use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (unknown object, bad kernel size, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation precondition (shape mismatch, unnormalized input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("corrupt raster {}: {reason}", path.display())]
    CorruptRaster { path: PathBuf, reason: String },

    #[error("schema version mismatch in {}: expected {expected}, found {found}", path.display())]
    SchemaVersion {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("malformed file {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    /// A loss term became NaN or infinite during training.
    #[error("non-finite loss term `{term}` at iteration {iteration}")]
    NonFiniteLoss { term: String, iteration: u64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
