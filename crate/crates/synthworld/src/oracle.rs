//! Monte-Carlo ground truth for failure rates.
//!
//! Deliberately written from the config alone: it re-derives prompt
//! handling, latent sampling, scoring, ranking and the failure policies
//! instead of calling into [`crate::World`], so that agreement between the
//! two is evidence rather than tautology.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use spurfinder_core::{FailurePolicy, LabelId, ParentRule, PolicyVariant};

use crate::config::WorldConfig;
use crate::error::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub failures: u64,
    pub draws: u64,
    pub rate: f64,
    pub stderr: f64,
}

impl OracleEstimate {
    fn new(failures: u64, draws: u64) -> Self {
        let rate = failures as f64 / draws as f64;
        OracleEstimate {
            failures,
            draws,
            rate,
            stderr: (rate * (1.0 - rate) / draws as f64).sqrt(),
        }
    }
}

/// Everything the oracle needs, flattened out of the config.
struct Flat {
    labels: Vec<String>,
    parent_of: Vec<String>,
    class_vecs: Vec<Vec<f64>>,
    attr_vecs: Vec<Vec<f64>>,
    priors: Vec<Vec<f64>>,
    // (attribute, class, weight)
    links: Vec<(usize, usize, f64)>,
    sigma: f64,
    wrong: f64,
}

impl Flat {
    fn from(cfg: &WorldConfig) -> Self {
        let labels: Vec<String> = cfg.classes.iter().map(|c| c.label.0.clone()).collect();
        let idx = |l: &LabelId| labels.iter().position(|x| x == &l.0).expect("validated label");
        let priors = cfg
            .attributes
            .iter()
            .map(|a| {
                cfg.classes
                    .iter()
                    .map(|c| *a.prior.get(&c.label).unwrap_or(&a.default_prior))
                    .collect()
            })
            .collect();
        let links = cfg
            .bias_links
            .iter()
            .map(|l| {
                let a = cfg.attributes.iter().position(|x| x.name == l.attribute).expect("validated");
                (a, idx(&l.target), l.weight)
            })
            .collect();
        Flat {
            parent_of: cfg.classes.iter().map(|c| c.parent.0.clone()).collect(),
            class_vecs: cfg.classes.iter().map(|c| c.vector.clone()).collect(),
            attr_vecs: cfg.attributes.iter().map(|a| a.vector.clone()).collect(),
            priors,
            links,
            sigma: cfg.noise_sigma,
            wrong: cfg.generator_wrong_label_prob,
            labels,
        }
    }

    /// Draws (image class, attribute flags) for a prompt of class `y`.
    fn draw_image(&self, rng: &mut StdRng, y: usize, forced: &[bool]) -> (usize, Vec<bool>) {
        let attrs: Vec<bool> = (0..self.attr_vecs.len())
            .map(|a| forced[a] || rng.random_bool(self.priors[a][y].clamp(0.0, 1.0)))
            .collect();
        let class = if rng.random_bool(self.wrong.clamp(0.0, 1.0)) {
            rng.random_range(0..self.labels.len())
        } else {
            y
        };
        (class, attrs)
    }

    /// Class indices ranked by one noisy score draw.
    fn ranking(&self, rng: &mut StdRng, class: usize, attrs: &[bool]) -> Vec<usize> {
        let dim = self.class_vecs[0].len();
        let mut x = self.class_vecs[class].clone();
        for (a, on) in attrs.iter().enumerate() {
            if *on {
                for j in 0..dim {
                    x[j] += self.attr_vecs[a][j];
                }
            }
        }
        let mut scores = vec![0.0; self.labels.len()];
        for (c, s) in scores.iter_mut().enumerate() {
            for j in 0..dim {
                *s += self.class_vecs[c][j] * x[j];
            }
        }
        for &(a, c, w) in &self.links {
            if attrs[a] {
                scores[c] += w;
            }
        }
        for s in scores.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *s += self.sigma * z;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then(self.labels[a].cmp(&self.labels[b]))
        });
        order
    }

    fn fails(&self, order: &[usize], truth: usize, policy: &FailurePolicy) -> bool {
        let sibling = |c: usize| self.parent_of[c] == self.parent_of[truth];
        match policy.variant {
            PolicyVariant::Top3ExcludesTrue => !order[..policy.k.min(order.len())].contains(&truth),
            PolicyVariant::Top1WrongOutsideParent => order[0] != truth && !sibling(order[0]),
            PolicyVariant::Top3AnyOutsideParent => {
                if order[0] == truth {
                    return false;
                }
                let top = &order[..policy.k.min(order.len())];
                match policy.parent_rule {
                    ParentRule::All => top.iter().all(|&c| !sibling(c)),
                    ParentRule::Any => top.iter().any(|&c| !sibling(c)),
                }
            }
        }
    }
}

/// Attribute flags forced on by the sentences of `caption`.
fn forced_attributes(cfg: &WorldConfig, caption: &str) -> Result<Vec<bool>, WorldError> {
    let lower = caption.to_lowercase();
    let split = lower
        .find(").")
        .ok_or_else(|| WorldError::Prompt("caption lacks a `(parent).` base".into()))?;
    let mut forced = vec![false; cfg.attributes.len()];
    for piece in lower[split + 2..].split('.') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let sentence = format!("{piece}.");
        match cfg.attributes.iter().position(|a| a.phrase == sentence) {
            Some(a) => forced[a] = true,
            None if cfg.strict_prompts => return Err(WorldError::UnknownPhrase(sentence)),
            None => {}
        }
    }
    Ok(forced)
}

/// Estimated failure rate of images generated from `caption` for class
/// `label` (or, with `target`, the rate of failures whose top-1 is
/// `target`).
pub fn oracle_rate(
    cfg: &WorldConfig,
    caption: &str,
    label: &LabelId,
    target: Option<&LabelId>,
    policy: &FailurePolicy,
    draws: u64,
    seed: u64,
) -> Result<OracleEstimate, WorldError> {
    let flat = Flat::from(cfg);
    let y = flat
        .labels
        .iter()
        .position(|l| l == &label.0)
        .ok_or_else(|| WorldError::UnknownClass(label.to_string()))?;
    let t = match target {
        Some(t) => Some(
            flat.labels
                .iter()
                .position(|l| l == &t.0)
                .ok_or_else(|| WorldError::UnknownClass(t.to_string()))?,
        ),
        None => None,
    };
    let forced = forced_attributes(cfg, caption)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..draws {
        let (class, attrs) = flat.draw_image(&mut rng, y, &forced);
        let order = flat.ranking(&mut rng, class, &attrs);
        if flat.fails(&order, y, policy) && t.is_none_or(|t| order[0] == t) {
            failures += 1;
        }
    }
    Ok(OracleEstimate::new(failures, draws.max(1)))
}

/// P(second classifier fails | first fails) for two classifiers that share
/// the world but draw independent noise.
pub fn oracle_transfer(
    cfg: &WorldConfig,
    caption: &str,
    label: &LabelId,
    policy: &FailurePolicy,
    draws: u64,
    seed: u64,
) -> Result<OracleEstimate, WorldError> {
    let flat = Flat::from(cfg);
    let y = flat
        .labels
        .iter()
        .position(|l| l == &label.0)
        .ok_or_else(|| WorldError::UnknownClass(label.to_string()))?;
    let forced = forced_attributes(cfg, caption)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut first, mut both) = (0u64, 0u64);
    for _ in 0..draws {
        let (class, attrs) = flat.draw_image(&mut rng, y, &forced);
        if flat.fails(&flat.ranking(&mut rng, class, &attrs), y, policy) {
            first += 1;
            if flat.fails(&flat.ranking(&mut rng, class, &attrs), y, policy) {
                both += 1;
            }
        }
    }
    Ok(OracleEstimate::new(both, first.max(1)))
}

/// Rate of (base + phrase) over rate of base, both targeted.
pub fn oracle_ratio(
    cfg: &WorldConfig,
    base: &str,
    phrase: &str,
    label: &LabelId,
    target: &LabelId,
    policy: &FailurePolicy,
    draws: u64,
    seed: u64,
) -> Result<f64, WorldError> {
    let with = oracle_rate(cfg, &format!("{base} {phrase}"), label, Some(target), policy, draws, seed)?;
    let without = oracle_rate(cfg, base, label, Some(target), policy, draws, seed ^ 0x5EED)?;
    Ok(with.rate / without.rate.max(1.0 / draws as f64))
}
