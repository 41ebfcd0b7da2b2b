use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub base_url: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
}

impl ServiceEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServiceEndpoint {
            base_url: base_url.into(),
            max_in_flight: 16,
            retry: RetryPolicy::default(),
            timeout_ms: 60_000,
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight == 0 {
            return Err("max-in-flight must be at least 1".into());
        }
        if self.retry.max_attempts == 0 {
            return Err("max-attempts must be at least 1".into());
        }
        Ok(())
    }
}

impl Default for ServiceEndpoint {
    fn default() -> Self {
        ServiceEndpoint::new("http://127.0.0.1:8700")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceRole {
    Generator,
    Captioner,
    Scorer,
    Classifier,
    Embedder,
}

impl ServiceRole {
    pub const ALL: [ServiceRole; 5] = [
        ServiceRole::Generator,
        ServiceRole::Captioner,
        ServiceRole::Scorer,
        ServiceRole::Classifier,
        ServiceRole::Embedder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ServiceRole::Generator => "generator",
            ServiceRole::Captioner => "captioner",
            ServiceRole::Scorer => "scorer",
            ServiceRole::Classifier => "classifier",
            ServiceRole::Embedder => "embedder",
        }
    }

    pub fn route(&self) -> &'static str {
        match self {
            ServiceRole::Generator => "generate",
            ServiceRole::Captioner => "caption",
            ServiceRole::Scorer => "score",
            ServiceRole::Classifier => "classify",
            ServiceRole::Embedder => "embed",
        }
    }
}

impl fmt::Display for ServiceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
