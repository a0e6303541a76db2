use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape {left:?} does not conform with {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("node {0} is not recorded on this tape")]
    UnknownNode(usize),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("instance {0} produced no output")]
    EmptyOutput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid instance {id}: {message}")]
    Validation { id: String, message: String },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("all {0} instances failed")]
    CorpusFailed(usize),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
