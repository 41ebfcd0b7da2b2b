use std::sync::Arc;

use async_trait::async_trait;
use spurfinder_gateway::{CallContext, ModelBackend, ReturnedImage, ServiceError};

use crate::error::WorldError;
use crate::world::World;

fn to_service(e: WorldError) -> ServiceError {
    ServiceError::bad_request(e.to_string())
}

/// The synthetic world behind the gateway's backend trait.
#[derive(Clone)]
pub struct SynthBackend {
    world: Arc<World>,
}

impl SynthBackend {
    pub fn new(world: World) -> Self {
        SynthBackend { world: Arc::new(world) }
    }

    pub fn world(&self) -> &World {
        &self.world
    }
}

#[async_trait]
impl ModelBackend for SynthBackend {
    fn name(&self) -> &str {
        "synth"
    }

    async fn generate(&self, _ctx: &CallContext, prompt: &str, n: u32, seed: u64) -> Result<Vec<ReturnedImage>, ServiceError> {
        let images = self.world.generate(prompt, n, seed).map_err(to_service)?;
        Ok(images
            .into_iter()
            .enumerate()
            .map(|(i, (_, png))| ReturnedImage {
                index: i as u32,
                png: Ok(png),
            })
            .collect())
    }

    async fn classify(&self, _ctx: &CallContext, png: &[u8], k: u32) -> Result<Vec<(String, f64)>, ServiceError> {
        let ranked = self.world.classify(png, k as usize).map_err(to_service)?;
        Ok(ranked.into_iter().map(|(l, s)| (l.0, s)).collect())
    }

    async fn caption(
        &self,
        _ctx: &CallContext,
        png: &[u8],
        prefix: &str,
        max_sentences: u32,
        _profile: &str,
    ) -> Result<String, ServiceError> {
        self.world.caption(png, prefix, max_sentences as usize).map_err(to_service)
    }

    async fn score(&self, _ctx: &CallContext, png: &[u8], caption: &str) -> Result<f64, ServiceError> {
        self.world.score(png, caption).map_err(to_service)
    }

    async fn embed(&self, _ctx: &CallContext, png: &[u8], space: &str) -> Result<Vec<f64>, ServiceError> {
        self.world.embed(png, space).map_err(to_service)
    }
}
