use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PsbcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PsbcError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at layer {layer}, coordinate {index}")]
    Propagation { layer: usize, index: usize },

    #[error("training diverged: non-finite cost at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("model file: field `{field}`: {message}")]
    Load { field: String, message: String },

    #[error("rank deficiency: requested {requested} components, data has rank {achieved}")]
    Rank { requested: usize, achieved: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PsbcError {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        PsbcError::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn load(field: impl Into<String>, message: impl Into<String>) -> Self {
        PsbcError::Load {
            field: field.into(),
            message: message.into(),
        }
    }
}
