use thiserror::Error;

/// Errors produced by graph construction, integration, training and the runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph construction failed: {0}")]
    Construction(String),

    #[error("graph is disconnected: {components} components, smallest orphaned component has {orphan_size} nodes")]
    Disconnected { components: usize, orphan_size: usize },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("integration blew up at step {step}: non-finite state")]
    Blowup { step: usize },

    #[error("training aborted at epoch {epoch}: {reason}")]
    TrainingAborted { epoch: usize, reason: String },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }
}
