use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid streamline: {0}")]
    InvalidStreamline(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:e}, last finite loss {last_loss:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        lr: f64,
        last_loss: Option<f64>,
    },

    #[error("template {template}: no valid fiber after {attempts} attempts ({reason})")]
    Template {
        template: String,
        attempts: usize,
        reason: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
