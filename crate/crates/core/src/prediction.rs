use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::hierarchy::LabelId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: LabelId,
    pub score: f64,
}

/// Top-k classifier output, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LabelScore>", into = "Vec<LabelScore>")]
pub struct Prediction {
    topk: Vec<LabelScore>,
}

impl Prediction {
    /// Validates ordering (non-increasing, finite scores) and label
    /// distinctness.
    pub fn new(topk: Vec<LabelScore>) -> Result<Self, CoreError> {
        if topk.is_empty() {
            return Err(CoreError::InvalidPrediction("empty top-k".into()));
        }
        for w in topk.windows(2) {
            if w[1].score > w[0].score {
                return Err(CoreError::InvalidPrediction(format!(
                    "scores increase from `{}` to `{}`",
                    w[0].label, w[1].label
                )));
            }
        }
        if let Some(bad) = topk.iter().find(|e| !e.score.is_finite()) {
            return Err(CoreError::InvalidPrediction(format!(
                "non-finite score for `{}`",
                bad.label
            )));
        }
        for (i, a) in topk.iter().enumerate() {
            if topk[..i].iter().any(|b| b.label == a.label) {
                return Err(CoreError::InvalidPrediction(format!(
                    "label `{}` repeated",
                    a.label
                )));
            }
        }
        Ok(Prediction { topk })
    }

    pub fn k(&self) -> usize {
        self.topk.len()
    }

    pub fn top1(&self) -> &LabelId {
        &self.topk[0].label
    }

    pub fn entries(&self) -> &[LabelScore] {
        &self.topk
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabelId> {
        self.topk.iter().map(|e| &e.label)
    }
}

impl TryFrom<Vec<LabelScore>> for Prediction {
    type Error = CoreError;

    fn try_from(v: Vec<LabelScore>) -> Result<Self, Self::Error> {
        Prediction::new(v)
    }
}

impl From<Prediction> for Vec<LabelScore> {
    fn from(p: Prediction) -> Self {
        p.topk
    }
}
