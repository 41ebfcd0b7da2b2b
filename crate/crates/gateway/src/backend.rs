use async_trait::async_trait;

use crate::error::ServiceError;

/// Per-call metadata forwarded to the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallContext {
    /// Deterministic hash of (endpoint, route, payload); identical for
    /// every retry of the same request.
    pub request_key: String,
}

/// One image of a generation response. Undecodable payloads are reported
/// per index so siblings survive.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnedImage {
    pub index: u32,
    pub png: Result<Vec<u8>, String>,
}

/// The five model services. Implementations must be pure functions of
/// their inputs for a fixed backend state, so retries are idempotent.
#[async_trait]
pub trait ModelBackend: Send + Sync {
    /// Short name used in logs and reports.
    fn name(&self) -> &str;

    async fn generate(
        &self,
        ctx: &CallContext,
        prompt: &str,
        n: u32,
        seed: u64,
    ) -> Result<Vec<ReturnedImage>, ServiceError>;

    async fn classify(&self, ctx: &CallContext, png: &[u8], k: u32) -> Result<Vec<(String, f64)>, ServiceError>;

    async fn caption(
        &self,
        ctx: &CallContext,
        png: &[u8],
        prefix: &str,
        max_sentences: u32,
        profile: &str,
    ) -> Result<String, ServiceError>;

    async fn score(&self, ctx: &CallContext, png: &[u8], caption: &str) -> Result<f64, ServiceError>;

    async fn embed(&self, ctx: &CallContext, png: &[u8], space: &str) -> Result<Vec<f64>, ServiceError>;
}
