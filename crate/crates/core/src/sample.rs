use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::caption::Caption;
use crate::hash::ContentHash;
use crate::prediction::Prediction;

/// One generated image and everything known about it.
///
/// `(prompt, seed, index)` identifies a sample within a run; the image
/// itself is referenced by content hash, so duplicate generations share a
/// blob but remain distinct samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: ContentHash,
    pub prompt: Caption,
    pub seed: u64,
    pub index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

impl Sample {
    pub fn new(image: ContentHash, prompt: Caption, seed: u64, index: u32) -> Self {
        Sample {
            image,
            prompt,
            seed,
            index,
            prediction: None,
            embeddings: BTreeMap::new(),
        }
    }

    pub fn embedding(&self, space: &str) -> Option<&[f64]> {
        self.embeddings.get(space).map(Vec::as_slice)
    }
}
