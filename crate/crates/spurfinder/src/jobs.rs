//! Background jobs behind the API. Every mutation goes through one queue
//! drained by a fixed number of workers; clients poll for state.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};
use spurfinder_engine::{Progress, ProgressSnapshot};
use tokio::sync::mpsc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Baseline,
    Measure,
    Refine,
    Harvest,
    Metric,
}

/// Moves forward only: queued, running, then done or failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: ProgressSnapshot,
    /// Record produced by a finished job.
    pub result_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Job body: gets the live counters, returns the id of the record it
/// produced or an error message.
pub type Work = Box<dyn FnOnce(Arc<Progress>) -> BoxFuture<'static, Result<String, String>> + Send>;

struct Entry {
    kind: JobKind,
    state: JobState,
    progress: Arc<Progress>,
    result_ref: Option<String>,
    error: Option<String>,
}

type Table = Arc<Mutex<HashMap<String, Entry>>>;

pub struct JobQueue {
    table: Table,
    tx: mpsc::UnboundedSender<(String, Work)>,
    next: AtomicU64,
}

impl JobQueue {
    /// Spawns `workers` tasks on the current runtime.
    pub fn new(workers: usize) -> Self {
        let (tx, rx) = mpsc::unbounded_channel::<(String, Work)>();
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        let table: Table = Arc::default();
        for _ in 0..workers.max(1) {
            let rx = rx.clone();
            let table = table.clone();
            tokio::spawn(async move {
                loop {
                    let Some((id, work)) = rx.lock().await.recv().await else {
                        break;
                    };
                    let progress = {
                        let mut t = table.lock().expect("job table poisoned");
                        let e = t.get_mut(&id).expect("queued job is registered");
                        e.state = JobState::Running;
                        e.progress.clone()
                    };
                    let outcome = work(progress).await;
                    let mut t = table.lock().expect("job table poisoned");
                    let e = t.get_mut(&id).expect("running job is registered");
                    match outcome {
                        Ok(r) => {
                            e.state = JobState::Done;
                            e.result_ref = Some(r);
                        }
                        Err(msg) => {
                            tracing::warn!(job = %id, error = %msg, "job failed");
                            e.state = JobState::Failed;
                            e.error = Some(msg);
                        }
                    }
                }
            });
        }
        JobQueue {
            table,
            tx,
            next: AtomicU64::new(1),
        }
    }

    pub fn submit(&self, kind: JobKind, work: Work) -> String {
        let id = format!("job-{}", self.next.fetch_add(1, Ordering::Relaxed));
        self.table.lock().expect("job table poisoned").insert(
            id.clone(),
            Entry {
                kind,
                state: JobState::Queued,
                progress: Arc::new(Progress::default()),
                result_ref: None,
                error: None,
            },
        );
        if self.tx.send((id.clone(), work)).is_err() {
            let mut t = self.table.lock().expect("job table poisoned");
            let e = t.get_mut(&id).expect("just inserted");
            e.state = JobState::Failed;
            e.error = Some("job queue is shut down".into());
        }
        id
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        let t = self.table.lock().expect("job table poisoned");
        t.get(id).map(|e| Job {
            job_id: id.to_string(),
            kind: e.kind,
            state: e.state,
            progress: e.progress.snapshot(),
            result_ref: e.result_ref.clone(),
            error: e.error.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn runs_jobs_to_completion() {
        let q = JobQueue::new(2);
        let ok = q.submit(
            JobKind::Measure,
            Box::new(|p| {
                Box::pin(async move {
                    p.record(3, 1);
                    Ok("hypothesis-4".to_string())
                })
            }),
        );
        let bad = q.submit(JobKind::Metric, Box::new(|_| Box::pin(async { Err("boom".to_string()) })));
        assert!(q.get("job-99").is_none());
        for _ in 0..200 {
            let (a, b) = (q.get(&ok).unwrap(), q.get(&bad).unwrap());
            if a.state >= JobState::Done && b.state >= JobState::Done {
                assert_eq!(a.state, JobState::Done);
                assert_eq!(a.result_ref.as_deref(), Some("hypothesis-4"));
                assert_eq!((a.progress.sampled, a.progress.failures), (3, 1));
                assert_eq!(b.state, JobState::Failed);
                assert_eq!(b.error.as_deref(), Some("boom"));
                return;
            }
            tokio::time::sleep(std::time::Duration::from_millis(5)).await;
        }
        panic!("jobs never finished");
    }
}
