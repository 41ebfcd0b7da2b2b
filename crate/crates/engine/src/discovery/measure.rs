use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use spurfinder_core::{Caption, ContentHash, CoreError, FailurePolicy, LabelId, Sample};

use super::assemble::Assembly;
use super::sampling::{sample_caption, Measurement};
use crate::config::StopRule;
use crate::engine::Engine;
use crate::error::Result;
use crate::progress::Progress;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub label: LabelId,
    pub target: Option<LabelId>,
    pub caption: Caption,
    pub policy: FailurePolicy,
    pub stop: StopRule,
    pub seed: u64,
    pub measurement: Measurement,
    /// Failure rate towards each top-1 label.
    pub per_target_rates: BTreeMap<LabelId, f64>,
    pub failures: Vec<Sample>,
    pub examples: Vec<ContentHash>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Origin {
    /// Assembled from a failure cluster.
    Cluster { cluster: String },
    /// A rewrite of another hypothesis.
    Refined { from: String, rule: String },
    /// Entered by a user.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub label: LabelId,
    pub target: Option<LabelId>,
    pub caption: Caption,
    pub origin: Origin,
    pub policy: FailurePolicy,
    pub seed: u64,
    pub measurement: Measurement,
    pub baseline_ref: String,
    pub baseline: Measurement,
    /// Hypothesis rate over baseline rate; `None` when the baseline rate
    /// is zero (undefined).
    pub ratio_any: Option<f64>,
    pub ratio_target: Option<f64>,
    pub confirmed: bool,
    pub failures: Vec<Sample>,
    pub examples: Vec<ContentHash>,
    /// Greedy trace, for hypotheses assembled from a cluster.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assembly: Option<Assembly>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Confirmed when the hypothesis interval lies entirely above the
/// baseline interval. Target rates are compared when both sides have one.
pub fn is_confirmed(hyp: &Measurement, baseline: &Measurement) -> bool {
    match (&hyp.target_rate, &baseline.target_rate) {
        (Some(h), Some(b)) => h.strictly_above(b),
        _ => hyp.any_rate.strictly_above(&baseline.any_rate),
    }
}

#[allow(clippy::too_many_arguments)]
pub async fn sample_baseline(
    engine: &Engine,
    label: &LabelId,
    target: Option<&LabelId>,
    policy: &FailurePolicy,
    stop: &StopRule,
    seed: u64,
    progress: &Progress,
) -> Result<BaselineResult> {
    let caption = engine.base_caption(label)?;
    let out = sample_caption(engine, &caption, label, target, policy, stop, seed, progress).await?;
    let n = out.measurement.n as f64;
    let per_target_rates = out
        .measurement
        .failure_labels
        .iter()
        .map(|(l, c)| (l.clone(), *c as f64 / n))
        .collect();
    Ok(BaselineResult {
        label: label.clone(),
        target: target.cloned(),
        caption,
        policy: *policy,
        stop: *stop,
        seed,
        measurement: out.measurement,
        per_target_rates,
        failures: out.failures,
        examples: out.examples,
    })
}

#[allow(clippy::too_many_arguments)]
pub async fn measure_hypothesis(
    engine: &Engine,
    caption: &Caption,
    label: &LabelId,
    target: Option<&LabelId>,
    policy: &FailurePolicy,
    stop: &StopRule,
    seed: u64,
    baseline: (&str, &BaselineResult),
    origin: Origin,
    progress: &Progress,
) -> Result<Hypothesis> {
    let expected = engine.base_caption(label)?;
    if caption.base() != expected.base() {
        return Err(CoreError::BasePromptMismatch {
            expected: expected.base().to_string(),
            found: caption.base().to_string(),
        }
        .into());
    }
    let (baseline_ref, baseline) = baseline;
    let out = sample_caption(engine, caption, label, target, policy, stop, seed, progress).await?;
    let m = out.measurement;
    let b = &baseline.measurement;
    let ratio_target = match (&m.target_rate, &b.target_rate) {
        (Some(h), Some(bt)) => ratio(h.p, bt.p),
        _ => None,
    };
    Ok(Hypothesis {
        label: label.clone(),
        target: target.cloned(),
        caption: caption.clone(),
        origin,
        policy: *policy,
        seed,
        ratio_any: ratio(m.any_rate.p, b.any_rate.p),
        ratio_target,
        confirmed: is_confirmed(&m, b),
        measurement: m,
        baseline_ref: baseline_ref.to_string(),
        baseline: b.clone(),
        failures: out.failures,
        examples: out.examples,
        assembly: None,
    })
}
