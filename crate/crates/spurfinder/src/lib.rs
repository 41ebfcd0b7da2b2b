//! Command line and HTTP front ends of the discovery engine.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod jobs;

pub use config::{AppConfig, Context};
pub use error::{AppError, AppResult};
