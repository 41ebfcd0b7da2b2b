//! Uniform access to the external model services.
//!
//! Every service sits behind the [`ModelBackend`] trait. Backends are
//! registered by name in a [`BackendRegistry`] (`http` is built in; the
//! synthetic world registers `synth`) and wrapped by a [`Gateway`] that adds
//! request keys, retries with seeded jitter, per-endpoint in-flight limits
//! and response validation.

mod backend;
mod endpoint;
mod error;
mod gateway;
mod http;
mod profile;
mod registry;
pub mod server;
mod sink;
pub mod wire;

pub use backend::{CallContext, ModelBackend, ReturnedImage};
pub use endpoint::{RetryPolicy, ServiceEndpoint, ServiceRole};
pub use error::{GatewayError, ServiceError, ServiceErrorKind};
pub use gateway::{GatewayBuilder, Gateway, GatewayStats, GeneratedSample, GenerationBatch};
pub use http::HttpBackend;
pub use profile::{FewShotProfile, FewShot};
pub use registry::{BackendRegistry, BackendSpec};
pub use sink::BlobSink;

/// Embedding spaces every gateway understands.
pub const CLUSTER_SPACE: &str = "cluster";
pub const FID_SPACE: &str = "fid";
