use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::StatsError;

/// A binomial proportion with its Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub k: u64,
    pub n: u64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
}

impl RateEstimate {
    /// Two estimates are separated when `self`'s interval lies strictly
    /// above `other`'s.
    pub fn strictly_above(&self, other: &RateEstimate) -> bool {
        self.ci_lo > other.ci_hi
    }
}

pub(crate) fn z_for_level(level: f64) -> Result<f64, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

pub fn wilson_ci(k: u64, n: u64, level: f64) -> Result<RateEstimate, StatsError> {
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    if k > n {
        return Err(StatsError::CountExceedsTrials { k, n });
    }
    let z = z_for_level(level)?;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let mut lo = (center - half).max(0.0);
    let mut hi = (center + half).min(1.0);
    if k == 0 {
        lo = 0.0;
    }
    if k == n {
        hi = 1.0;
    }
    Ok(RateEstimate {
        k,
        n,
        p,
        ci_lo: lo.min(p),
        ci_hi: hi.max(p),
        level,
    })
}

/// Fraction of a dataset that fails under one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRate {
    pub classifier: String,
    pub failures: u64,
    pub evaluated: u64,
    pub excluded: u64,
    pub rate: f64,
}

impl TransferRate {
    pub fn new(classifier: impl Into<String>, failures: u64, evaluated: u64, excluded: u64) -> Self {
        let rate = if evaluated == 0 {
            0.0
        } else {
            failures as f64 / evaluated as f64
        };
        TransferRate {
            classifier: classifier.into(),
            failures,
            evaluated,
            excluded,
            rate,
        }
    }
}
