#![allow(dead_code)]

use std::sync::Arc;

use spurfinder_engine::{Engine, EngineConfig};
use spurfinder_gateway::{Gateway, CLUSTER_SPACE, FID_SPACE};
use spurfinder_store::Run;
use spurfinder_synthworld::{default_world, SynthBackend, World, WorldConfig};

pub fn gateway(cfg: WorldConfig) -> Arc<Gateway> {
    let world = World::new(cfg).unwrap();
    let labels: Vec<_> = world.hierarchy().leaves().cloned().collect();
    Arc::new(
        Gateway::builder(Arc::new(SynthBackend::new(world)))
            .labels(labels)
            .space(CLUSTER_SPACE, None)
            .space(FID_SPACE, None)
            .build()
            .unwrap(),
    )
}

pub fn engine_for(world: WorldConfig, cfg: EngineConfig, run: Option<Run>) -> Engine {
    let hierarchy = World::new(world.clone()).unwrap().hierarchy().clone();
    let engine = Engine::new(gateway(world), hierarchy, cfg).unwrap();
    match run {
        Some(r) => engine.with_run(r),
        None => engine,
    }
}

pub fn default_engine(cfg: EngineConfig) -> Engine {
    engine_for(default_world(), cfg, None)
}
