use spurfinder_core::{CaptionParseError, CoreError};
use spurfinder_gateway::GatewayError;
use spurfinder_stats::StatsError;
use spurfinder_store::StoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Caption(#[from] CaptionParseError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no samples could be classified: {0}")]
    ServiceDown(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing image {0}")]
    MissingImage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line} ({image}): {reason}")]
    Manifest { line: usize, image: String, reason: String },
}

impl EngineError {
    /// True when the failure lies with a remote service rather than with
    /// the caller's input.
    pub fn is_service_failure(&self) -> bool {
        match self {
            EngineError::Gateway(e) => e.is_service_failure(),
            EngineError::ServiceDown(_) => true,
            _ => false,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        EngineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;
