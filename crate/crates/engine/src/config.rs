use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spurfinder_core::{ContentHash, FailurePolicy, PolicyVariant};

use crate::error::{EngineError, Result};

/// When a sampling loop stops. Rates are only evaluated at batch
/// boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct StopRule {
    pub target_failures: u64,
    pub max_samples: u64,
    pub batch_size: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            target_failures: 20,
            max_samples: 20_000,
            batch_size: 64,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.target_failures == 0 || self.max_samples == 0 || self.batch_size == 0 {
            return Err(EngineError::Invalid("stop rule counts must be at least 1".into()));
        }
        if self.batch_size > self.max_samples {
            return Err(EngineError::Invalid("batch-size exceeds max-samples".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct HarvestConfig {
    pub sample_cap: u64,
    pub keep_cap: u64,
    pub total_keep_cap: Option<u64>,
    pub max_caption_sentences: u32,
    /// Captions harvested at once.
    pub width: usize,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            sample_cap: 1000,
            keep_cap: 5,
            total_keep_cap: None,
            max_caption_sentences: 2,
            width: 4,
        }
    }
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keep_cap > self.sample_cap {
            return Err(EngineError::Invalid("keep-cap exceeds sample-cap".into()));
        }
        if self.width == 0 {
            return Err(EngineError::Invalid("harvest width must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything that determines a run's results. Its hash names the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub policy: FailurePolicy,
    pub stop: StopRule,
    pub ci_level: f64,
    /// Cosine-distance threshold for merging clusters.
    pub tau: f64,
    pub max_clusters: usize,
    /// Clusters turned into hypotheses per discovery.
    pub max_hypotheses: usize,
    /// Clusters smaller than this are not captioned.
    pub min_cluster_size: usize,
    /// K: sentences in an assembled caption.
    pub caption_sentences: usize,
    /// Sentences requested per member captioning.
    pub caption_request_sentences: u32,
    pub fewshot_profile: String,
    /// Candidate measurements per refinement.
    pub refine_budget: usize,
    pub refine_rules: Vec<String>,
    /// Extra adjectives on top of the shipped lexicon.
    pub extra_adjectives: BTreeSet<String>,
    /// Correct samples kept per measurement for side-by-side display.
    pub keep_examples: usize,
    pub harvest: HarvestConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 0,
            policy: FailurePolicy::new(PolicyVariant::Top1WrongOutsideParent),
            stop: StopRule::default(),
            ci_level: 0.95,
            tau: 0.3,
            max_clusters: 8,
            max_hypotheses: 3,
            min_cluster_size: 2,
            caption_sentences: 3,
            caption_request_sentences: 4,
            fewshot_profile: "default".into(),
            refine_budget: 16,
            refine_rules: vec!["ablate".into(), "drop-adjectives".into()],
            extra_adjectives: BTreeSet::new(),
            keep_examples: 8,
            harvest: HarvestConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stop.validate()?;
        self.harvest.validate()?;
        if !(0.0..=2.0).contains(&self.tau) {
            return Err(EngineError::Invalid(format!("tau {} outside [0, 2]", self.tau)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(EngineError::Invalid("ci-level must lie in (0, 1)".into()));
        }
        if self.max_clusters == 0 {
            return Err(EngineError::Invalid("max-clusters must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses the `key = value` config format. Unknown keys are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Content hash of the canonical JSON form.
    pub fn hash(&self) -> ContentHash {
        ContentHash::of(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
