use spurfinder_core::{
    build_base_prompt, is_failure, Caption, ContentHash, FailurePolicy, LabelId, LabelScore, PolicyVariant,
    Prediction,
};
use spurfinder_stats::wilson_ci;
use spurfinder_synthworld::oracle::{oracle_rate, oracle_transfer};
use spurfinder_synthworld::{
    default_policy, default_world, default_world_with_weight, World, WorldConfig, DEFAULT_LABEL, DEFAULT_TARGET,
    LOG_FLOOR, PLANTED_PHRASE,
};

fn base(world: &World, label: &str) -> String {
    build_base_prompt(&LabelId::new(label), world.hierarchy()).unwrap().render()
}

fn flowery(world: &World) -> String {
    format!("{} {PLANTED_PHRASE}", base(world, DEFAULT_LABEL))
}

fn no_noise(mut cfg: WorldConfig) -> WorldConfig {
    cfg.noise_sigma = 0.0;
    cfg.generator_wrong_label_prob = 0.0;
    cfg
}

fn prediction(ranked: Vec<(LabelId, f64)>) -> Prediction {
    Prediction::new(ranked.into_iter().map(|(label, score)| LabelScore { label, score }).collect()).unwrap()
}

#[test]
fn shipped_world_is_calibrated() {
    let cfg = default_world();
    let cal = cfg.calibration.clone().expect("calibration recorded");
    assert_eq!(cal.wanted_ratio, 20.0);
    // the recorded constant reproduces: independent draws, same order of ratio
    let world = World::new(cfg.clone()).unwrap();
    let policy = default_policy();
    let target = LabelId::new(DEFAULT_TARGET);
    let label = LabelId::new(DEFAULT_LABEL);
    let with = oracle_rate(&cfg, &flowery(&world), &label, Some(&target), &policy, 200_000, 99).unwrap();
    let without = oracle_rate(&cfg, &base(&world, DEFAULT_LABEL), &label, Some(&target), &policy, 400_000, 98).unwrap();
    let ratio = with.rate / without.rate;
    assert!(ratio >= 10.0, "ratio {ratio}");
    assert!((15.0..27.0).contains(&ratio), "ratio {ratio}");
    assert_eq!(world.hierarchy().roots().len(), 3);
    assert_eq!(world.hierarchy().leaves().count(), 8);
}

#[test]
fn forced_attribute_and_determinism() {
    let world = World::new(default_world()).unwrap();
    let flower = world.config().attribute_index("flower").unwrap();
    let imgs = world.generate(&flowery(&world), 200, 5).unwrap();
    assert!(imgs.iter().all(|(l, _)| l.has(flower)));
    let again = world.generate(&flowery(&world), 200, 5).unwrap();
    let h = |v: &Vec<(spurfinder_synthworld::image::Latent, Vec<u8>)>| {
        v.iter().map(|(_, p)| ContentHash::of(p)).collect::<Vec<_>>()
    };
    assert_eq!(h(&imgs), h(&again));
    assert_ne!(h(&imgs), h(&world.generate(&flowery(&world), 200, 6).unwrap()));
}

#[test]
fn prior_frequency_is_binomial() {
    let mut cfg = default_world();
    cfg.generator_wrong_label_prob = 0.0;
    let world = World::new(cfg).unwrap();
    let leaf = world.config().attribute_index("leaf").unwrap();
    let fly = world.config().class_index(&LabelId::new("fly")).unwrap();
    let p = world.config().prior(leaf, fly);
    let n = 10_000;
    let hits = world
        .generate(&base(&world, "fly"), n, 1)
        .unwrap()
        .iter()
        .filter(|(l, _)| l.has(leaf))
        .count() as f64;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((hits - n as f64 * p).abs() < 3.0 * sd, "{hits} vs {}", n as f64 * p);
}

#[test]
fn unknown_phrase_lenient_or_strict() {
    let mut cfg = default_world();
    let world = World::new(cfg.clone()).unwrap();
    let prompt = format!("{} it is purple.", base(&world, "fly"));
    assert!(world.parse_prompt(&prompt).unwrap().unknown == vec!["it is purple.".to_string()]);
    cfg.strict_prompts = true;
    assert!(World::new(cfg).unwrap().parse_prompt(&prompt).is_err());
    assert!(world.generate("a photo of a fly.", 1, 0).is_err());
}

#[test]
fn noiseless_classifier_is_diagonal_and_bias_flips() {
    let world = World::new(no_noise(default_world_with_weight(0.0))).unwrap();
    for (l, png) in world.generate(&base(&world, "rose"), 20, 3).unwrap() {
        let top = world.classify(&png, 1).unwrap();
        assert_eq!(&top[0].0, world.label(l.class as usize));
    }
    let strong = World::new(no_noise(default_world_with_weight(2.0))).unwrap();
    for (_, png) in strong.generate(&flowery(&strong), 20, 3).unwrap() {
        let top = strong.classify(&png, 2).unwrap();
        assert_eq!(top[0].0, LabelId::new("bee"));
        assert!(top[0].1 - top[1].1 > 0.0);
    }
    let png = &strong.generate(&flowery(&strong), 1, 0).unwrap()[0].1;
    assert!(strong.classify(png, 9).is_err());
    assert_eq!(strong.classify(png, 3).unwrap(), strong.classify(png, 3).unwrap());
}

#[test]
fn baseline_error_matches_oracle() {
    let cfg = default_world();
    let world = World::new(cfg.clone()).unwrap();
    let policy = FailurePolicy::new(PolicyVariant::Top3ExcludesTrue).with_k(1);
    let prompt = base(&world, "daisy");
    let n = 100_000u32;
    let mut fails = 0u64;
    for (_, png) in world.generate(&prompt, n, 77).unwrap() {
        let p = prediction(world.classify(&png, 3).unwrap());
        if is_failure(&p, &LabelId::new("daisy"), &policy, world.hierarchy()).unwrap() {
            fails += 1;
        }
    }
    let est = oracle_rate(&cfg, &prompt, &LabelId::new("daisy"), None, &policy, 200_000, 5).unwrap();
    let p = fails as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64 + est.stderr * est.stderr).sqrt();
    assert!((p - est.rate).abs() < 3.0 * se, "measured {p} oracle {}", est.rate);
    assert!(est.rate > 0.01 && est.rate < 0.1);
}

#[test]
fn caption_contract() {
    let mut cfg = default_world();
    cfg.caption_drop_prob = 0.0;
    let world = World::new(cfg).unwrap();
    let prefix = base(&world, "fly");
    for (l, png) in world.generate(&flowery(&world), 30, 8).unwrap() {
        let text = world.caption(&png, &prefix, 16).unwrap();
        let c = Caption::from_completion(&prefix, &text).unwrap();
        let expected: Vec<String> = world
            .config()
            .attributes
            .iter()
            .enumerate()
            .filter(|(i, _)| l.has(*i))
            .map(|(_, a)| a.phrase.clone())
            .collect();
        assert_eq!(c.sentences(), expected.as_slice());
        assert!(c.sentences().contains(&PLANTED_PHRASE.to_string()));
        assert_eq!(world.caption(&png, &prefix, 0).unwrap(), prefix);
        assert!(Caption::from_completion(&prefix, &world.caption(&png, &prefix, 1).unwrap()).unwrap().len() <= 1);
    }
}

#[test]
fn drop_frequency_is_binomial() {
    let world = World::new(default_world()).unwrap();
    let prefix = base(&world, "fly");
    let n = 10_000;
    let mut dropped = 0.0;
    for (_, png) in world.generate(&flowery(&world), n, 12).unwrap() {
        if !world.caption(&png, &prefix, 16).unwrap().contains(PLANTED_PHRASE) {
            dropped += 1.0;
        }
    }
    let d = world.config().caption_drop_prob;
    let sd = (n as f64 * d * (1.0 - d)).sqrt();
    assert!((dropped - n as f64 * d).abs() < 3.0 * sd, "{dropped}");
}

#[test]
fn score_is_the_drop_model_likelihood() {
    let world = World::new(default_world()).unwrap();
    let prefix = base(&world, "fly");
    let d: f64 = world.config().caption_drop_prob;
    let phrases: Vec<String> = world.config().attributes.iter().map(|a| a.phrase.clone()).collect();
    for (l, png) in world.generate(&flowery(&world), 20, 4).unwrap() {
        let present: Vec<usize> = (0..phrases.len()).filter(|i| l.has(*i)).collect();
        let full = Caption::new(prefix.clone(), &present.iter().map(|i| phrases[*i].clone()).collect::<Vec<_>>());
        let s_full = world.score(&png, &full.render()).unwrap();
        let expected = present.len() as f64 * (1.0 - d).ln();
        assert!((s_full - expected).abs() < 1e-9);
        let empty = world.score(&png, &prefix).unwrap();
        assert!((empty - present.len() as f64 * d.ln()).abs() < 1e-9);
        let one = world.score(&png, &format!("{prefix} {PLANTED_PHRASE}")).unwrap();
        assert!(empty <= one);
        // the full caption is the best subset of the phrase pool
        for (i, p) in phrases.iter().enumerate() {
            let s = world.score(&png, &full.with_sentence(p).render()).unwrap();
            if !l.has(i) {
                assert!(s < s_full && s <= LOG_FLOOR);
            }
        }
        assert_eq!(world.score(&png, &full.render()).unwrap(), s_full);
    }
}

#[test]
fn embeddings() {
    let world = World::new(default_world()).unwrap();
    let imgs = world.generate(&flowery(&world), 2, 4).unwrap();
    let png = &imgs[0].1;
    assert_eq!(world.embed(png, "cluster").unwrap(), world.embed(png, "cluster").unwrap());
    assert_eq!(world.embed(png, "cluster").unwrap().len(), 24);
    assert_eq!(world.embed(png, "fid").unwrap().len(), 8);
    assert!(world.embed(png, "bogus").is_err());
    // attribute-sum vector plus small noise
    let l = imgs[0].0;
    let v = world.embed(png, "cluster").unwrap();
    let mut expect = world.config().classes[l.class as usize].vector.clone();
    for (i, a) in world.config().attributes.iter().enumerate() {
        if l.has(i) {
            for (x, y) in expect.iter_mut().zip(&a.vector) {
                *x += y;
            }
        }
    }
    let err: f64 = v.iter().zip(&expect).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err < 0.5, "{err}");
}

#[test]
fn oracle_edge_cases() {
    let cfg = default_world();
    let world = World::new(cfg.clone()).unwrap();
    let all = FailurePolicy::new(PolicyVariant::Top3ExcludesTrue).with_k(8);
    let r = oracle_rate(&cfg, &flowery(&world), &LabelId::new("fly"), None, &all, 10_000, 1).unwrap();
    assert_eq!(r.rate, 0.0);
    let unbiased = default_world_with_weight(0.0);
    let a = oracle_rate(&unbiased, &flowery(&world), &LabelId::new("fly"), None, &default_policy(), 100_000, 2).unwrap();
    let b = oracle_rate(&unbiased, &base(&world, "fly"), &LabelId::new("fly"), None, &default_policy(), 100_000, 3).unwrap();
    assert!((a.rate - b.rate).abs() < 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt());
}

#[test]
fn twin_transfer_matches_oracle() {
    // a strongly planted world: bias large enough that most flower images fail
    let cfg = default_world_with_weight(1.3);
    let twin = World::new(cfg.twin(17)).unwrap();
    let world = World::new(cfg.clone()).unwrap();
    let policy = default_policy();
    let fly = LabelId::new("fly");
    let (mut failed, mut transferred) = (0u64, 0u64);
    for (_, png) in world.generate(&flowery(&world), 4000, 21).unwrap() {
        if is_failure(&prediction(world.classify(&png, 1).unwrap()), &fly, &policy, world.hierarchy()).unwrap() {
            failed += 1;
            if is_failure(&prediction(twin.classify(&png, 1).unwrap()), &fly, &policy, twin.hierarchy()).unwrap() {
                transferred += 1;
            }
        }
    }
    let oracle = oracle_transfer(&cfg, &flowery(&world), &fly, &policy, 200_000, 4).unwrap();
    let rate = wilson_ci(transferred, failed, 0.95).unwrap();
    assert!((0.6..=0.95).contains(&rate.p), "{}", rate.p);
    let se = (rate.p * (1.0 - rate.p) / failed as f64 + oracle.stderr.powi(2)).sqrt();
    assert!((rate.p - oracle.rate).abs() < 3.0 * se, "{} vs {}", rate.p, oracle.rate);
}
