//! Shared domain model for the failure-discovery engine.
//!
//! Everything here is immutable after construction and free of I/O, so the
//! types can be handed to any number of concurrent pipeline tasks.

pub mod caption;
pub mod error;
pub mod hash;
pub mod hierarchy;
pub mod policy;
pub mod prediction;
pub mod sample;

pub use caption::{build_base_prompt, split_sentences, Caption, CaptionParseError};
pub use error::CoreError;
pub use hash::ContentHash;
pub use hierarchy::{LabelHierarchy, LabelId, LabelNode};
pub use policy::{is_failure, FailurePolicy, ParentRule, PolicyVariant};
pub use prediction::{LabelScore, Prediction};
pub use sample::Sample;
