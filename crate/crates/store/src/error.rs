use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("run config hash mismatch: stored {stored}, requested {requested}")]
    ConfigMismatch { stored: String, requested: String },
    #[error("run at {path} is locked by another writer{}", holder.as_ref().map(|h| format!(" (pid {h})")).unwrap_or_default())]
    Locked { path: PathBuf, holder: Option<String> },
    #[error("run {0} does not exist")]
    NoSuchRun(String),
    #[error("invalid run id `{0}`")]
    InvalidRunId(String),
    #[error("blob {0} not found")]
    MissingBlob(String),
    #[error("blob {expected} failed verification (content hashes to {actual})")]
    HashMismatch { expected: String, actual: String },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("run is dirty after an earlier write failure")]
    Dirty,
    #[error("injected crash at write boundary {0}")]
    InjectedCrash(u64),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }
}
