mod common;

use std::sync::Arc;

use spurfinder_core::{is_failure, Caption, LabelId};
use spurfinder_engine::datasetgen::{
    caption_seed_corpus, export, exported_blob, harvest, import, AdversarialDataset, SeedCaption, SeedImage,
};
use spurfinder_engine::{Engine, EngineConfig, EngineError, HarvestConfig, Progress};
use spurfinder_synthworld::{DEFAULT_LABEL, PLANTED_PHRASE};

async fn seeds(e: &Engine, label: &str, extra: Option<&str>, n: u32, seed: u64) -> Vec<SeedImage> {
    let label = LabelId::new(label);
    let mut caption = e.base_caption(&label).unwrap();
    if let Some(s) = extra {
        caption = caption.with_sentence(s);
    }
    let batch = e.gateway().generate(&caption, n, seed).await.unwrap();
    batch
        .samples
        .into_iter()
        .map(|g| SeedImage {
            name: format!("{label}/{}.png", g.sample.index),
            png: g.png,
            truth: label.clone(),
        })
        .collect()
}

fn planted_captions(e: &Engine, n: usize) -> Vec<SeedCaption> {
    let fly = LabelId::new(DEFAULT_LABEL);
    let base = e.base_caption(&fly).unwrap();
    let others = ["it is at night.", "there is water nearby.", "it is held in a hand.", "the background is blurred."];
    (0..n)
        .map(|i| {
            let mut c = base.with_sentence(PLANTED_PHRASE);
            if i % 5 != 0 {
                c = c.with_sentence(others[i % 4]);
            }
            if i >= 5 {
                c = Caption::new(c.base(), &[c.sentences().to_vec(), vec![format!("it is scene {i}.")]].concat());
            }
            SeedCaption { caption: c, truth: fly.clone() }
        })
        .collect()
}

#[tokio::test]
async fn seed_corpus_captions_obey_the_limit() {
    let e = common::default_engine(EngineConfig::default());
    let imgs = seeds(&e, "fly", Some(PLANTED_PHRASE), 10, 1).await;
    let corpus = caption_seed_corpus(&e, &imgs, 2).await.unwrap();
    assert_eq!(corpus.captions.len(), 10);
    assert!(corpus.captions.iter().all(|c| c.caption.len() <= 2));
    let bare = caption_seed_corpus(&e, &imgs, 0).await.unwrap();
    assert!(bare.captions.iter().all(|c| c.caption.is_empty()));
    assert!(matches!(caption_seed_corpus(&e, &[], 2).await, Err(EngineError::Invalid(_))));
}

#[tokio::test]
async fn harvest_keeps_only_reclassified_failures() {
    let e = common::default_engine(EngineConfig::default());
    let cfg = HarvestConfig::default();
    let policy = e.config().policy;
    let caps = planted_captions(&e, 20);
    let ds = harvest(&e, "planted", &caps, &cfg, &policy, 9, &Progress::default()).await.unwrap();
    assert!(!ds.entries.is_empty());
    assert!(ds.entries.len() <= 100);
    for c in &ds.captions {
        assert!(c.kept <= cfg.keep_cap);
    }
    for entry in &ds.entries {
        let png = e.image(&entry.image).unwrap();
        let pred = e.gateway().classify(&png, 3).await.unwrap();
        assert_eq!(&pred, &entry.prediction);
        assert!(is_failure(&pred, &entry.truth, &policy, e.hierarchy()).unwrap());
    }
    let again = harvest(&e, "planted", &caps, &cfg, &policy, 9, &Progress::default()).await.unwrap();
    assert_eq!(ds.manifest_hash, again.manifest_hash);
    let other = harvest(&e, "planted", &caps, &cfg, &policy, 10, &Progress::default()).await.unwrap();
    assert_ne!(ds.manifest_hash, other.manifest_hash);
    assert!(harvest(&e, "none", &[], &cfg, &policy, 9, &Progress::default()).await.is_err());
}

#[tokio::test]
async fn total_cap_truncates_round_robin() {
    let e = common::default_engine(EngineConfig::default());
    let cfg = HarvestConfig {
        total_keep_cap: Some(7),
        ..Default::default()
    };
    let caps = planted_captions(&e, 3);
    let ds = harvest(&e, "capped", &caps, &cfg, &e.config().policy, 2, &Progress::default()).await.unwrap();
    assert_eq!(ds.entries.len(), 7);
    let kept: Vec<u64> = ds.captions.iter().map(|c| c.kept).collect();
    assert!(kept.iter().max().unwrap() - kept.iter().min().unwrap() <= 1, "{kept:?}");
}

#[tokio::test]
async fn export_round_trip_and_tamper_detection() {
    let e = common::default_engine(EngineConfig::default());
    let caps = planted_captions(&e, 4);
    let ds = harvest(&e, "rt", &caps, &HarvestConfig::default(), &e.config().policy, 5, &Progress::default())
        .await
        .unwrap();
    let a = tempfile::tempdir().unwrap();
    let manifest = export(&ds, a.path(), |h| e.image(h)).unwrap();
    let bytes = std::fs::read(&manifest).unwrap();
    assert_eq!(spurfinder_core::ContentHash::of(&bytes), ds.manifest_hash);
    let first = std::str::from_utf8(&bytes).unwrap().lines().next().unwrap();
    let keys = ["image_sha256", "label", "topk", "caption", "seed", "index", "policy"];
    let at: Vec<usize> = keys.iter().map(|k| first.find(&format!("\"{k}\":")).unwrap()).collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "{first}");

    let back = import(a.path(), "rt").unwrap();
    assert_eq!(back.entries, ds.entries);
    let b = tempfile::tempdir().unwrap();
    let blobs = |h: &spurfinder_core::ContentHash| Ok(Arc::new(std::fs::read(exported_blob(a.path(), h)).unwrap()));
    let manifest_b = export(&back, b.path(), blobs).unwrap();
    assert_eq!(std::fs::read(&manifest_b).unwrap(), bytes);

    // corrupt one byte of the second entry's blob
    let victim = &ds.entries[1].image;
    let path = exported_blob(a.path(), victim);
    let mut png = std::fs::read(&path).unwrap();
    let last = png.len() - 1;
    png[last] ^= 1;
    std::fs::write(&path, png).unwrap();
    match import(a.path(), "rt") {
        Err(EngineError::Manifest { line, image, .. }) => {
            assert_eq!(line, 2);
            assert_eq!(image, victim.to_hex());
        }
        other => panic!("expected a manifest error, got {other:?}"),
    }
}

#[tokio::test]
async fn empty_dataset_exports_an_empty_manifest() {
    let ds = AdversarialDataset::new("empty", spurfinder_synthworld::default_policy(), Vec::new());
    let dir = tempfile::tempdir().unwrap();
    let m = export(&ds, dir.path(), |h| Err(EngineError::MissingImage(h.to_hex()))).unwrap();
    assert!(std::fs::read(&m).unwrap().is_empty());
    assert!(import(dir.path(), "empty").unwrap().entries.is_empty());
}

#[tokio::test]
async fn seed_directory_layout() {
    let e = common::default_engine(EngineConfig::default());
    let dir = tempfile::tempdir().unwrap();
    for (label, n) in [("fly", 3u32), ("bee", 2)] {
        std::fs::create_dir_all(dir.path().join(label)).unwrap();
        for s in seeds(&e, label, None, n, 4).await {
            std::fs::write(dir.path().join(&s.name), &*s.png).unwrap();
        }
    }
    std::fs::write(dir.path().join("fly/notes.txt"), "ignored").unwrap();
    let loaded = spurfinder_engine::datasetgen::load_seed_dir(dir.path()).unwrap();
    let names: Vec<&str> = loaded.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["bee/0.png", "bee/1.png", "fly/0.png", "fly/1.png", "fly/2.png"]);
}

