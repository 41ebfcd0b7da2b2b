mod common;

use std::sync::Arc;

use spurfinder_core::LabelId;
use spurfinder_engine::datasetgen::{harvest, SeedCaption};
use spurfinder_engine::metrics::{consistency, fid_between, kid_between, nearest, transfer_matrix, LabeledImage};
use spurfinder_engine::{Engine, EngineConfig, HarvestConfig, Progress};
use spurfinder_gateway::{CLUSTER_SPACE, FID_SPACE};
use spurfinder_synthworld::{default_world, default_world_with_weight, DEFAULT_LABEL, PLANTED_PHRASE};

async fn harvested(e: &Engine, n: usize, keep: u64) -> Vec<LabeledImage> {
    let fly = LabelId::new(DEFAULT_LABEL);
    let base = e.base_caption(&fly).unwrap();
    let caps: Vec<SeedCaption> = (0..n)
        .map(|i| SeedCaption {
            caption: base.with_sentence(PLANTED_PHRASE).with_sentence(&format!("it is scene {i}.")),
            truth: fly.clone(),
        })
        .collect();
    let cfg = HarvestConfig {
        keep_cap: keep,
        ..Default::default()
    };
    let ds = harvest(e, "t", &caps, &cfg, &e.config().policy, 1, &Progress::default()).await.unwrap();
    ds.entries
        .iter()
        .map(|d| LabeledImage {
            image: d.image,
            png: e.image(&d.image).unwrap(),
            truth: d.truth.clone(),
        })
        .collect()
}

#[tokio::test]
async fn failures_transfer_to_a_reseeded_twin() {
    let world = default_world_with_weight(1.3);
    let e = common::engine_for(world.clone(), EngineConfig::default(), None);
    let data = harvested(&e, 40, 20).await;
    assert!(data.len() > 500, "{}", data.len());
    let classifiers = vec![
        ("self".to_string(), common::gateway(world.clone())),
        ("twin".to_string(), common::gateway(world.twin(77))),
    ];
    let rates = transfer_matrix(&data, &classifiers, &e.config().policy, e.hierarchy()).await.unwrap();
    assert_eq!(rates[0].rate, 1.0);
    assert_eq!(rates[0].evaluated, data.len() as u64);
    assert!((0.6..=0.95).contains(&rates[1].rate), "twin transfer {}", rates[1].rate);
    assert!(transfer_matrix(&[], &classifiers, &e.config().policy, e.hierarchy()).await.is_err());
}

#[tokio::test]
async fn noise_only_classifiers_err_independently() {
    let mut world = default_world();
    world.bias_links.clear();
    world.generator_wrong_label_prob = 0.0;
    world.noise_sigma = 0.5;
    let e = common::engine_for(world.clone(), EngineConfig::default(), None);
    let mut data = Vec::new();
    for label in ["fly", "bee", "daisy", "wasp"] {
        let label = LabelId::new(label);
        let batch = e.gateway().generate(&e.base_caption(&label).unwrap(), 2500, 3).await.unwrap();
        data.extend(batch.samples.into_iter().map(|g| LabeledImage {
            image: g.sample.image,
            png: g.png,
            truth: label.clone(),
        }));
    }
    let a = common::gateway(world.twin(1));
    let b = common::gateway(world.twin(2));
    let kappa = consistency(&a, &b, &data).await.unwrap();
    assert!(kappa.abs() < 0.05, "kappa {kappa}");
    let same = consistency(&a, &a, &data).await.unwrap();
    assert!((same - 1.0).abs() < 1e-12);
}

#[tokio::test]
async fn shift_metrics_and_neighbors() {
    let e = common::default_engine(EngineConfig::default());
    let fly = LabelId::new(DEFAULT_LABEL);
    let base = e.base_caption(&fly).unwrap();
    let plain: Vec<Arc<Vec<u8>>> = e.gateway().generate(&base, 400, 1).await.unwrap().samples.into_iter().map(|g| g.png).collect();
    let other: Vec<Arc<Vec<u8>>> = e.gateway().generate(&base, 400, 2).await.unwrap().samples.into_iter().map(|g| g.png).collect();
    let flowery: Vec<Arc<Vec<u8>>> = e
        .gateway()
        .generate(&base.with_sentence(PLANTED_PHRASE), 400, 1)
        .await
        .unwrap()
        .samples
        .into_iter()
        .map(|g| g.png)
        .collect();
    let gw = e.gateway();
    let self_fid = fid_between(gw, &plain, &plain).await.unwrap().fid.unwrap();
    assert!(self_fid.abs() < 1e-8);
    let near = fid_between(gw, &plain, &other).await.unwrap().fid.unwrap();
    let far = fid_between(gw, &plain, &flowery).await.unwrap().fid.unwrap();
    assert!(near < far, "{near} vs {far}");
    let k = kid_between(gw, &plain, &flowery, 100).await.unwrap().kid.unwrap();
    assert!(k.value > 3.0 * k.stderr, "{k:?}");

    let corpus: Vec<LabeledImage> = plain
        .iter()
        .take(50)
        .map(|p| LabeledImage {
            image: spurfinder_core::ContentHash::of(p),
            png: p.clone(),
            truth: fly.clone(),
        })
        .collect();
    for space in [CLUSTER_SPACE, FID_SPACE] {
        let hits = nearest(gw, &plain[7], &corpus, space, 3, Some(&fly)).await.unwrap();
        assert_eq!(hits[0].image, corpus[7].image);
        assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }
    assert!(nearest(gw, &plain[7], &corpus, CLUSTER_SPACE, 3, Some(&LabelId::new("bee"))).await.is_err());
}
