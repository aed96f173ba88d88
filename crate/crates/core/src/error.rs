use hinsr_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("ingest error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Ingest { line: Option<usize>, msg: String },

    #[error("encode error: {0}")]
    Encode(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("training diverged at episode {episode}, epoch {epoch}: {detail}")]
    Diverged {
        episode: usize,
        epoch: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn ingest(msg: impl Into<String>) -> Self {
        Error::Ingest {
            line: None,
            msg: msg.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
