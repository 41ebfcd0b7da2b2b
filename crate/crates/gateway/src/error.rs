use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceErrorKind {
    /// Connection-level failure or timeout.
    Transport,
    /// Non-success HTTP status.
    Status(u16),
    /// The response did not follow the wire protocol.
    Malformed,
}

/// One failed attempt against a backend.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message}")]
pub struct ServiceError {
    pub kind: ServiceErrorKind,
    pub message: String,
    pub retryable: bool,
}

impl ServiceError {
    pub fn transport(msg: impl Into<String>) -> Self {
        ServiceError {
            kind: ServiceErrorKind::Transport,
            message: msg.into(),
            retryable: true,
        }
    }

    pub fn status(code: u16, msg: impl Into<String>, retryable: bool) -> Self {
        ServiceError {
            kind: ServiceErrorKind::Status(code),
            message: msg.into(),
            retryable,
        }
    }

    pub fn bad_request(msg: impl Into<String>) -> Self {
        ServiceError::status(400, msg, false)
    }

    pub fn malformed(msg: impl Into<String>) -> Self {
        ServiceError {
            kind: ServiceErrorKind::Malformed,
            message: msg.into(),
            retryable: false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{service} failed after {attempts} attempt(s): {error}")]
    Service {
        service: &'static str,
        attempts: u32,
        error: ServiceError,
    },
    #[error("{service} timed out after {attempts} attempt(s)")]
    Timeout { service: &'static str, attempts: u32 },
    #[error("partial result: missing image indices {missing:?}")]
    PartialResult { missing: Vec<u32> },
    #[error("protocol violation from {service}: {message}")]
    Protocol { service: &'static str, message: String },
    #[error("classifier returned unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown embedding space `{0}`")]
    UnknownSpace(String),
    #[error("embedding space `{space}` expects dimension {expected}, got {got}")]
    DimensionMismatch {
        space: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value from {0}")]
    NonFinite(&'static str),
    #[error("blob sink: {0}")]
    Sink(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("backend configuration: {0}")]
    BackendConfig(String),
}

impl GatewayError {
    /// True for failures of the remote service itself (as opposed to bad
    /// input or contract violations).
    pub fn is_service_failure(&self) -> bool {
        matches!(self, GatewayError::Service { .. } | GatewayError::Timeout { .. })
    }
}
