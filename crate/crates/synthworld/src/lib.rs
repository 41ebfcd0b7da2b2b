//! A synthetic stand-in for the generator, captioner, scorer, classifier
//! and embedder.
//!
//! Images are small PNG block grids that encode a latent (class, attribute
//! set, noise seed). The classifier is a closed-form linear scorer with
//! Gaussian noise keyed by image hash, plus planted bias links that push
//! images carrying an attribute towards a target class. [`oracle`] holds an
//! independent Monte-Carlo estimate of the resulting failure rates.

mod backend;
mod config;
mod defaults;
mod error;
pub mod image;
pub mod oracle;
mod world;

use std::sync::Arc;

pub use backend::SynthBackend;
pub use config::{AttributeSpec, BiasLink, Calibration, ClassSpec, ParentSpec, WorldConfig};
pub use defaults::{
    calibrate, default_policy, default_world, default_world_with_weight, DEFAULT_LABEL, DEFAULT_TARGET,
    PLANTED_ATTRIBUTE, PLANTED_PHRASE,
};
pub use error::WorldError;
pub use world::{ParsedPrompt, World, LOG_FLOOR};

use spurfinder_gateway::{BackendRegistry, BackendSpec, GatewayError, ModelBackend, ServiceEndpoint};

/// Registers `synth` (optionally `synth:<world.json>`) in a registry.
pub fn register(registry: &mut BackendRegistry) {
    registry.register(
        "synth",
        Arc::new(|spec: &BackendSpec, _ep: &ServiceEndpoint| {
            let cfg = match &spec.arg {
                Some(path) => WorldConfig::load(std::path::Path::new(path))
                    .map_err(|e| GatewayError::BackendConfig(e.to_string()))?,
                None => default_world(),
            };
            let world = World::new(cfg).map_err(|e| GatewayError::BackendConfig(e.to_string()))?;
            Ok(Arc::new(SynthBackend::new(world)) as Arc<dyn ModelBackend>)
        }),
    );
}
