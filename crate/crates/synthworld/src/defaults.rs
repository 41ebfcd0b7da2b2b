use std::collections::BTreeMap;

use spurfinder_core::{FailurePolicy, LabelId, PolicyVariant};

use crate::config::{AttributeSpec, BiasLink, Calibration, ClassSpec, ParentSpec, WorldConfig};
use crate::error::WorldError;
use crate::oracle::oracle_ratio;

const SHIPPED: &str = include_str!("../world.json");

pub const DEFAULT_LABEL: &str = "fly";
pub const DEFAULT_TARGET: &str = "bee";
pub const PLANTED_ATTRIBUTE: &str = "flower";
pub const PLANTED_PHRASE: &str = "it is on a flower.";

/// The shipped default world with its calibrated bias weight.
pub fn default_world() -> WorldConfig {
    WorldConfig::from_json(SHIPPED).expect("shipped world.json is valid")
}

pub fn default_policy() -> FailurePolicy {
    FailurePolicy::new(PolicyVariant::Top1WrongOutsideParent)
}

fn unit(dim: usize, axis: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = scale;
    v
}

/// The default world before calibration; the planted link starts at
/// `weight`.
pub fn default_world_with_weight(weight: f64) -> WorldConfig {
    let dim = 24;
    let parents = [("insect", "insect"), ("hymenopteran", "hymenopteran"), ("flower", "flower")];
    let classes = [
        ("fly", "insect"),
        ("mosquito", "insect"),
        ("beetle", "insect"),
        ("bee", "hymenopteran"),
        ("wasp", "hymenopteran"),
        ("daisy", "flower"),
        ("rose", "flower"),
        ("sunflower", "flower"),
    ];
    // (name, phrase, embedding scale, default prior, per-class overrides)
    let attributes: [(&str, &str, f64, f64, &[(&str, f64)]); 16] = [
        (
            "flower",
            PLANTED_PHRASE,
            3.0,
            0.05,
            &[("fly", 0.03), ("bee", 0.6), ("wasp", 0.3), ("daisy", 0.0), ("rose", 0.0), ("sunflower", 0.0)],
        ),
        ("leaf", "it is on a green leaf.", 1.0, 0.15, &[]),
        ("sky", "the background is blue sky.", 1.0, 0.1, &[]),
        ("blur", "the background is blurred.", 1.0, 0.2, &[]),
        ("focus", "the subject is in sharp focus.", 1.0, 0.15, &[]),
        ("hand", "it is held in a hand.", 1.0, 0.05, &[]),
        ("wall", "it is on a white wall.", 1.0, 0.05, &[("fly", 0.1), ("mosquito", 0.15)]),
        ("water", "there is water nearby.", 1.0, 0.05, &[]),
        ("grass", "it is in the tall grass.", 1.0, 0.1, &[]),
        ("soil", "it is on brown soil.", 1.0, 0.05, &[("beetle", 0.2)]),
        ("window", "it is on a glass window.", 1.0, 0.04, &[("fly", 0.08)]),
        ("food", "it is on some food.", 1.0, 0.03, &[("fly", 0.08)]),
        ("dew", "there are small dew drops.", 1.0, 0.04, &[]),
        ("night", "it is at night.", 1.0, 0.03, &[]),
        ("closeup", "it is a close-up photo.", 1.0, 0.15, &[]),
        ("wood", "it is on a wooden table.", 1.0, 0.04, &[]),
    ];
    WorldConfig {
        dim,
        parents: parents
            .iter()
            .map(|(id, name)| ParentSpec {
                label: LabelId::new(*id),
                name: name.to_string(),
            })
            .collect(),
        classes: classes
            .iter()
            .enumerate()
            .map(|(i, (id, parent))| ClassSpec {
                label: LabelId::new(*id),
                name: id.to_string(),
                parent: LabelId::new(*parent),
                vector: unit(dim, i, 1.0),
            })
            .collect(),
        attributes: attributes
            .iter()
            .enumerate()
            .map(|(j, (name, phrase, scale, default_prior, over))| AttributeSpec {
                name: name.to_string(),
                phrase: phrase.to_string(),
                vector: unit(dim, 8 + j, *scale),
                prior: over
                    .iter()
                    .map(|(l, p)| (LabelId::new(*l), *p))
                    .collect::<BTreeMap<_, _>>(),
                default_prior: *default_prior,
            })
            .collect(),
        bias_links: vec![BiasLink {
            attribute: PLANTED_ATTRIBUTE.into(),
            target: LabelId::new(DEFAULT_TARGET),
            weight,
        }],
        noise_sigma: 0.26,
        caption_drop_prob: 0.1,
        generator_wrong_label_prob: 0.0395,
        embed_noise_sigma: 0.05,
        fid_dim: 8,
        noise_salt: 0,
        strict_prompts: false,
        calibration: None,
    }
}

/// Bisects the planted link weight until the oracle's target-rate ratio
/// for (base + planted phrase) over base is `wanted`.
pub fn calibrate(
    mut cfg: WorldConfig,
    label: &LabelId,
    target: &LabelId,
    attribute: &str,
    wanted: f64,
    draws: u64,
    seed: u64,
) -> Result<WorldConfig, WorldError> {
    let policy = default_policy();
    let hierarchy = cfg.hierarchy()?;
    let base = spurfinder_core::build_base_prompt(label, &hierarchy)
        .map_err(|e| WorldError::Config(e.to_string()))?
        .render();
    let phrase = cfg.attributes[cfg.attribute_index(attribute)?].phrase.clone();
    let ratio_at = |cfg: &mut WorldConfig, w: f64| {
        cfg.set_bias_weight(attribute, target, w);
        oracle_ratio(cfg, &base, &phrase, label, target, &policy, draws, seed)
    };
    let (mut lo, mut hi) = (0.0, 4.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(&mut cfg, mid)? < wanted {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let weight = (0.5 * (lo + hi) * 1e4).round() / 1e4;
    let achieved = ratio_at(&mut cfg, weight)?;
    cfg.calibration = Some(Calibration {
        label: label.clone(),
        target: target.clone(),
        attribute: attribute.to_string(),
        policy: policy.to_string(),
        wanted_ratio: wanted,
        oracle_ratio: (achieved * 1e3).round() / 1e3,
        draws,
        seed,
    });
    Ok(cfg)
}
