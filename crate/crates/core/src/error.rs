use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two shapes that must agree do not.
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },
    /// Spatial sizes that cannot be processed (divisibility, minimum size, ...).
    #[error("geometry error: {0}")]
    Geometry(String),
    /// A caller-side precondition was violated.
    #[error("contract violated: {0}")]
    Contract(String),
    /// An object was used in a state that does not allow the operation.
    #[error("invalid state: {0}")]
    State(String),
    /// A file did not parse.
    #[error("format error: {0}")]
    Format(String),
    /// A checkpoint does not match the architecture it is loaded into.
    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),
    /// Training diverged.
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {breakdown}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        breakdown: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, left: impl std::fmt::Debug, right: impl std::fmt::Debug) -> Self {
        Error::Dimension {
            op,
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
