use std::collections::BTreeMap;
use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use spurfinder_core::{is_failure, Caption, ContentHash, FailurePolicy, LabelId, Sample};
use spurfinder_stats::{wilson_ci, RateEstimate};

use crate::config::StopRule;
use crate::engine::Engine;
use crate::error::{EngineError, Result};
use crate::progress::Progress;

/// Counts from one sampling loop. Rates are exact ratios of the counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Samples generated and classified.
    pub n: u64,
    /// Images asked of the generator.
    pub requested: u64,
    /// Images lost to decode or service failures.
    pub skipped: u64,
    pub batches: u64,
    pub any_failures: u64,
    pub target_failures: Option<u64>,
    pub any_rate: RateEstimate,
    pub target_rate: Option<RateEstimate>,
    /// Failures by top-1 label.
    pub failure_labels: BTreeMap<LabelId, u64>,
}

impl Measurement {
    /// The rate the stop rule and confirmation compare.
    pub fn primary_rate(&self) -> &RateEstimate {
        self.target_rate.as_ref().unwrap_or(&self.any_rate)
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub measurement: Measurement,
    pub failures: Vec<Sample>,
    /// A few correctly classified samples, for side-by-side display.
    pub examples: Vec<ContentHash>,
}

/// Samples `caption` in batches with seeds `seed, seed+1, ...` until the
/// stop rule fires, classifying every image.
///
/// In targeted mode a failure counts towards the target iff its top-1 is
/// the target; the loop stops once `target_failures` such failures are in.
/// Untargeted, it stops on `target_failures` failures of any kind.
#[allow(clippy::too_many_arguments)]
pub async fn sample_caption(
    engine: &Engine,
    caption: &Caption,
    label: &LabelId,
    target: Option<&LabelId>,
    policy: &FailurePolicy,
    stop: &StopRule,
    seed: u64,
    progress: &Progress,
) -> Result<SampleOutcome> {
    stop.validate()?;
    engine.hierarchy().parent(label)?;
    if let Some(t) = target {
        engine.hierarchy().get(t)?;
    }
    let k = policy.required_k().max(3).min(engine.label_count()) as u32;
    if (k as usize) < policy.required_k() {
        return Err(EngineError::Invalid(format!(
            "policy {policy} needs {} labels but the classifier has {}",
            policy.required_k(),
            engine.label_count()
        )));
    }
    progress.add_budget(stop.max_samples);

    let mut failures = Vec::new();
    let mut examples = Vec::new();
    let mut failure_labels: BTreeMap<LabelId, u64> = BTreeMap::new();
    let (mut n, mut requested, mut skipped, mut batches) = (0u64, 0u64, 0u64, 0u64);
    let mut target_failures = 0u64;
    let mut last_error = None;

    while requested < stop.max_samples {
        let size = stop.batch_size.min(stop.max_samples - requested);
        let batch_seed = seed.wrapping_add(batches);
        requested += size;
        batches += 1;
        let batch = match engine.gateway().generate(caption, size as u32, batch_seed).await {
            Ok(b) => b,
            // retries are exhausted by now; a lost batch means the service is down
            Err(e) if e.is_service_failure() => return Err(EngineError::ServiceDown(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        skipped += batch.decode_failures.len() as u64;
        let preds = join_all(batch.samples.iter().map(|g| engine.gateway().classify(&g.png, k))).await;
        let (mut batch_n, mut batch_f) = (0, 0);
        let mut lost = None;
        for (g, pred) in batch.samples.into_iter().zip(preds) {
            let pred = match pred {
                Ok(p) => p,
                Err(e) if e.is_service_failure() => {
                    skipped += 1;
                    lost = Some(e.to_string());
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            batch_n += 1;
            let failed = is_failure(&pred, label, policy, engine.hierarchy())?;
            let mut sample = g.sample;
            if failed {
                batch_f += 1;
                let top1 = pred.top1().clone();
                if target == Some(&top1) {
                    target_failures += 1;
                }
                *failure_labels.entry(top1).or_default() += 1;
                engine.keep_image(sample.image, Arc::clone(&g.png))?;
                sample.prediction = Some(pred);
                failures.push(sample);
            } else if examples.len() < engine.config().keep_examples {
                engine.keep_image(sample.image, Arc::clone(&g.png))?;
                examples.push(sample.image);
            }
        }
        if let Some(e) = lost {
            if batch_n == 0 {
                return Err(EngineError::ServiceDown(e));
            }
            last_error = Some(e);
        }
        n += batch_n;
        progress.record(batch_n, batch_f);
        let count = if target.is_some() { target_failures } else { failures.len() as u64 };
        if count >= stop.target_failures {
            break;
        }
    }

    if n == 0 {
        return Err(EngineError::ServiceDown(
            last_error.unwrap_or_else(|| "every sample was lost".into()),
        ));
    }
    let level = engine.config().ci_level;
    let any_failures = failures.len() as u64;
    Ok(SampleOutcome {
        measurement: Measurement {
            n,
            requested,
            skipped,
            batches,
            any_failures,
            target_failures: target.map(|_| target_failures),
            any_rate: wilson_ci(any_failures, n, level)?,
            target_rate: match target {
                Some(_) => Some(wilson_ci(target_failures, n, level)?),
                None => None,
            },
            failure_labels,
        },
        failures,
        examples,
    })
}
