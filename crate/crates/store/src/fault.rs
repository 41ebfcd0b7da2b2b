use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Simulated process death at the N-th write boundary (0-based).
///
/// When the boundary is reached, half of the pending bytes are written and
/// the operation fails with [`crate::StoreError::InjectedCrash`]; the run
/// refuses every later write, as a dead process would.
#[derive(Debug, Clone)]
pub struct CrashPlan {
    crash_at: u64,
    counter: Arc<AtomicU64>,
}

impl CrashPlan {
    pub fn at(boundary: u64) -> Self {
        CrashPlan {
            crash_at: boundary,
            counter: Arc::new(AtomicU64::new(0)),
        }
    }

    /// A plan that never fires; useful for counting boundaries.
    pub fn never() -> Self {
        CrashPlan::at(u64::MAX)
    }

    /// Number of write boundaries seen so far.
    pub fn boundaries(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }

    /// Returns `Some(boundary)` when this write must be torn.
    pub(crate) fn tick(&self) -> Option<u64> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        (n == self.crash_at).then_some(n)
    }
}
