mod common;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spurfinder_core::LabelId;
use spurfinder_engine::{pipeline, EngineConfig, EngineError, Progress, StopRule};
use spurfinder_store::{CrashPlan, RecordKind, Run, StoreError};
use spurfinder_synthworld::{default_world, DEFAULT_LABEL, DEFAULT_TARGET};

fn config() -> EngineConfig {
    EngineConfig {
        seed: 8,
        stop: StopRule {
            target_failures: 8,
            max_samples: 4000,
            batch_size: 64,
        },
        refine_budget: 4,
        ..Default::default()
    }
}

async fn run_discover(root: &Path, crash: Option<CrashPlan>) -> Result<(), EngineError> {
    let cfg = config();
    let (run, _) = Run::open_with(root, "r", &cfg.hash().to_hex(), crash).unwrap();
    let e = common::engine_for(default_world(), cfg, Some(run));
    pipeline::discover(
        &e,
        &LabelId::new(DEFAULT_LABEL),
        Some(&LabelId::new(DEFAULT_TARGET)),
        &Progress::default(),
    )
    .await
    .map(|_| ())
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let dir = root.join("r");
    let mut out = BTreeMap::new();
    out.insert("chain.idx".into(), std::fs::read(dir.join("chain.idx")).unwrap());
    for kind in RecordKind::ALL {
        let name = kind.file_name();
        out.insert(name.clone(), std::fs::read(dir.join("records").join(&name)).unwrap_or_default());
    }
    out
}

#[tokio::test]
async fn crash_anywhere_then_resume_matches() {
    let reference = tempfile::tempdir().unwrap();
    let counter = CrashPlan::never();
    run_discover(reference.path(), Some(counter.clone())).await.unwrap();
    let boundaries = counter.boundaries();
    let want = snapshot(reference.path());
    assert!(boundaries > 10, "{boundaries} write boundaries");

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let at = rng.random_range(0..boundaries);
        let dir = tempfile::tempdir().unwrap();
        match run_discover(dir.path(), Some(CrashPlan::at(at))).await {
            Err(EngineError::Store(StoreError::InjectedCrash(n))) => assert_eq!(n, at),
            other => panic!("boundary {at}: expected an injected crash, got {other:?}"),
        }
        run_discover(dir.path(), None).await.unwrap();
        assert_eq!(snapshot(dir.path()), want, "boundary {at}");
    }
}

#[tokio::test]
async fn rerun_after_completion_appends_nothing() {
    let dir = tempfile::tempdir().unwrap();
    run_discover(dir.path(), None).await.unwrap();
    let first = snapshot(dir.path());
    run_discover(dir.path(), None).await.unwrap();
    assert_eq!(snapshot(dir.path()), first);
}
