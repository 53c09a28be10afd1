use std::path::PathBuf;

use mixedit_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("codec: {0}")]
    Codec(String),
    #[error("sequence: {0}")]
    Sequence(String),
    #[error("model: {0}")]
    Model(String),
    #[error("loss: {0}")]
    Loss(String),
    #[error("data: {0}")]
    Data(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("eval: {0}")]
    Eval(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category for CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "numeric",
            Error::Codec(_) => "codec",
            Error::Sequence(_) => "sequence",
            Error::Model(_) => "model",
            Error::Loss(_) => "loss",
            Error::Data(_) => "data",
            Error::Schedule(_) => "schedule",
            Error::Eval(_) => "eval",
            Error::Config(_) => "config",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
