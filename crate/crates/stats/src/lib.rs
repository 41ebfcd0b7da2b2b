//! Numerical statistics used by the discovery and harvesting stages.
//!
//! All functions are pure and operate on plain values.

pub mod consistency;
pub mod error;
pub mod fid;
pub mod kid;
pub mod mann_whitney;
pub mod neighbors;
pub mod rate;

pub use consistency::error_consistency;
pub use error::StatsError;
pub use fid::{fid, EmbeddingSetStats};
pub use kid::{kid, KidEstimate, DEFAULT_BLOCK_SIZE};
pub use mann_whitney::{mann_whitney, Alternative, MannWhitney, Method, EXACT_MAX_TOTAL};
pub use neighbors::{cosine_similarity, nearest_neighbors};
pub use rate::{wilson_ci, RateEstimate, TransferRate};
