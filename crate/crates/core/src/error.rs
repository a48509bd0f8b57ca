use std::path::PathBuf;

use ghost_autograd::StoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    /// Every problem found while validating a configuration, reported together.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    ConfigList(Vec<String>),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint configuration differs from the requested one:\n{0}")]
    ConfigMismatch(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("training diverged at step {step} ({what} is not finite); last good checkpoint: {}", .last_good.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    TrainingDiverged { step: u64, what: String, last_good: Option<PathBuf> },
    /// A loss or score that should be finite was not.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("detector adapter: {0}")]
    Adapter(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Configuration and usage problems, as opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ConfigList(_) | Error::ConfigMismatch(_))
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
