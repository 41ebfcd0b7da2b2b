//! Baseline sampling, failure clustering, greedy caption assembly and
//! hypothesis measurement.

mod assemble;
mod cluster;
mod measure;
mod sampling;

pub use assemble::{assemble_caption, greedy_assemble, Assembly, GreedyStep};
pub use cluster::{cluster_failures, cosine_distance, Cluster};
pub use measure::{is_confirmed, measure_hypothesis, sample_baseline, BaselineResult, Hypothesis, Origin};
pub use sampling::{sample_caption, Measurement, SampleOutcome};
