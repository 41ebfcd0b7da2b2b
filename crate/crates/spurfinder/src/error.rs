use spurfinder_engine::EngineError;
use spurfinder_gateway::GatewayError;
use spurfinder_store::StoreError;
use thiserror::Error;

/// Command outcome classes. The exit code is all a script sees.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    User(String),
    #[error("run locked: {0}")]
    Locked(String),
    #[error("service failure: {0}")]
    Service(String),
}

impl AppError {
    pub fn user(msg: impl Into<String>) -> Self {
        AppError::User(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::User(_) | AppError::Locked(_) => 1,
            AppError::Service(_) => 2,
        }
    }
}

impl From<EngineError> for AppError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(s) => s.into(),
            e if e.is_service_failure() => AppError::Service(e.to_string()),
            e => AppError::User(e.to_string()),
        }
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Locked { .. } => AppError::Locked(e.to_string()),
            e => AppError::User(e.to_string()),
        }
    }
}

impl From<GatewayError> for AppError {
    fn from(e: GatewayError) -> Self {
        if e.is_service_failure() {
            AppError::Service(e.to_string())
        } else {
            AppError::User(e.to_string())
        }
    }
}

pub type AppResult<T> = std::result::Result<T, AppError>;
