use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EmgfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EmgfError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },

    #[error("{op}: empty tensor")]
    Empty { op: &'static str },

    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },

    #[error("{path}:{line}: {msg}")]
    Record {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid instance: {0}")]
    Instance(String),

    #[error("constituency tree: {0}")]
    Tree(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EmgfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EmgfError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for problems with the input data rather than with usage or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            EmgfError::Record { .. }
                | EmgfError::Instance(_)
                | EmgfError::Tree(_)
                | EmgfError::Checkpoint(_)
                | EmgfError::Io { .. }
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self,
            EmgfError::Diverged { .. } | EmgfError::NonFinite { .. }
        )
    }
}
