use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Live counters for a long-running job. Only ever increase.
#[derive(Debug, Default)]
pub struct Progress {
    sampled: AtomicU64,
    failures: AtomicU64,
    budget: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    pub sampled: u64,
    pub failures: u64,
    pub budget: u64,
}

impl Progress {
    pub fn add_budget(&self, n: u64) {
        self.budget.fetch_add(n, Ordering::Relaxed);
    }

    pub fn record(&self, sampled: u64, failures: u64) {
        self.sampled.fetch_add(sampled, Ordering::Relaxed);
        self.failures.fetch_add(failures, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> ProgressSnapshot {
        ProgressSnapshot {
            sampled: self.sampled.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            budget: self.budget.load(Ordering::Relaxed),
        }
    }
}
