//! Failure discovery over black-box image models.
//!
//! An [`Engine`] owns a [`spurfinder_gateway::Gateway`] and an optional run
//! store. The [`pipeline`] module strings the stages together: baseline
//! sampling, failure clustering, greedy caption assembly, hypothesis
//! measurement and refinement, plus dataset harvesting.

pub mod config;
pub mod datasetgen;
pub mod discovery;
mod engine;
pub mod error;
pub mod metrics;
pub mod pipeline;
mod progress;
pub mod refine;
mod seeds;

pub use config::{EngineConfig, HarvestConfig, StopRule};
pub use engine::{Engine, Stored};
pub use error::{EngineError, Result};
pub use progress::{Progress, ProgressSnapshot};
pub use seeds::stream_seed;
