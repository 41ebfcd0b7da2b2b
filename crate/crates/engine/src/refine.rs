//! Caption rewrites: sentence ablation, adjective dropping, and the
//! budgeted refinement loop that measures them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use spurfinder_core::{Caption, LabelId};

use crate::discovery::{measure_hypothesis, BaselineResult, Hypothesis, Origin};
use crate::engine::Engine;
use crate::error::{EngineError, Result};
use crate::progress::Progress;
use crate::seeds::stream_seed;

/// Seed stage shared by every hypothesis measurement, so one caption gets
/// the same samples whether it was discovered, refined or typed in.
pub const MEASURE_STAGE: &str = "measure";

const COLORS: &[&str] = &[
    "amber", "aqua", "beige", "black", "blond", "blue", "bronze", "brown", "burgundy", "charcoal", "coral", "cream",
    "crimson", "cyan", "dark", "gold", "golden", "gray", "green", "grey", "indigo", "ivory", "khaki", "lavender",
    "light", "lilac", "magenta", "maroon", "mauve", "navy", "ochre", "olive", "orange", "pale", "pink", "purple",
    "red", "rose", "rust", "scarlet", "silver", "tan", "teal", "turquoise", "violet", "white", "yellow",
];
const SIZES: &[&str] = &[
    "big", "bulky", "colossal", "enormous", "fat", "giant", "gigantic", "huge", "immense", "large", "little", "long",
    "massive", "medium", "microscopic", "mini", "miniature", "narrow", "petite", "short", "skinny", "slim", "small",
    "tall", "thick", "thin", "tiny", "wide",
];
const MATERIALS: &[&str] = &[
    "aluminum", "brass", "brick", "canvas", "cardboard", "ceramic", "concrete", "copper", "cotton", "denim", "glass",
    "granite", "iron", "leather", "linen", "marble", "metal", "metallic", "nylon", "paper", "plastic", "porcelain",
    "rubber", "sandstone", "satin", "silk", "steel", "stone", "straw", "suede", "timber", "velvet", "wicker", "wood",
    "wooden", "wool", "woolen", "woven",
];

/// The shipped adjective word list (colors, sizes, materials).
pub fn default_lexicon() -> BTreeSet<String> {
    COLORS
        .iter()
        .chain(SIZES)
        .chain(MATERIALS)
        .map(|w| w.to_string())
        .collect()
}

/// Rule (i): the base plus each single sentence, in caption order.
pub fn ablate_sentences(caption: &Caption) -> Result<Vec<Caption>> {
    if caption.is_empty() {
        return Err(EngineError::Invalid("caption has no sentences to ablate".into()));
    }
    Ok(caption
        .sentences()
        .iter()
        .map(|s| Caption::new(caption.base(), &[s]))
        .collect())
}

fn word_key(token: &str) -> String {
    token.trim_matches(|c: char| c == ',' || c == ';').to_lowercase()
}

/// Rule (ii): the sentence with each lexicon word dropped on its own, then
/// with all of them dropped. Single drops are ordered by the dropped word.
pub fn drop_adjectives(sentence: &str, lexicon: &BTreeSet<String>) -> Vec<String> {
    let body = sentence.trim().trim_end_matches('.');
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let hits: BTreeSet<String> = tokens
        .iter()
        .map(|t| word_key(t))
        .filter(|w| lexicon.contains(w))
        .collect();
    let render = |drop: &dyn Fn(&str) -> bool| {
        let kept: Vec<&str> = tokens.iter().copied().filter(|t| !drop(&word_key(t))).collect();
        (!kept.is_empty()).then(|| format!("{}.", kept.join(" ")))
    };
    let mut out: Vec<String> = hits.iter().filter_map(|h| render(&|w| w == h)).collect();
    if hits.len() > 1 {
        out.extend(render(&|w| hits.contains(w)));
    }
    out
}

/// A caption rewrite. Rules are looked up by name from the config.
pub trait RewriteRule: Send + Sync {
    fn name(&self) -> &str;
    fn rewrite(&self, caption: &Caption, lexicon: &BTreeSet<String>) -> Vec<Caption>;
}

struct Ablate;

impl RewriteRule for Ablate {
    fn name(&self) -> &str {
        "ablate"
    }

    fn rewrite(&self, caption: &Caption, _: &BTreeSet<String>) -> Vec<Caption> {
        ablate_sentences(caption).unwrap_or_default()
    }
}

struct DropAdjectives;

impl RewriteRule for DropAdjectives {
    fn name(&self) -> &str {
        "drop-adjectives"
    }

    fn rewrite(&self, caption: &Caption, lexicon: &BTreeSet<String>) -> Vec<Caption> {
        let mut out = Vec::new();
        for (i, s) in caption.sentences().iter().enumerate() {
            for variant in drop_adjectives(s, lexicon) {
                let mut sentences = caption.sentences().to_vec();
                sentences[i] = variant;
                out.push(Caption::new(caption.base(), &sentences));
            }
        }
        out
    }
}

#[derive(Clone)]
pub struct RewriteRegistry {
    rules: BTreeMap<String, Arc<dyn RewriteRule>>,
}

impl Default for RewriteRegistry {
    fn default() -> Self {
        let mut r = RewriteRegistry { rules: BTreeMap::new() };
        r.register(Arc::new(Ablate));
        r.register(Arc::new(DropAdjectives));
        r
    }
}

impl RewriteRegistry {
    /// Adds or replaces a rule, e.g. one backed by an external paraphraser.
    pub fn register(&mut self, rule: Arc<dyn RewriteRule>) {
        self.rules.insert(rule.name().to_string(), rule);
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn RewriteRule>> {
        self.rules
            .get(name)
            .ok_or_else(|| EngineError::Config(format!("unknown rewrite rule `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum CandidateState {
    Measured { hypothesis: Box<Hypothesis> },
    /// Cut by the measurement budget.
    Unmeasured,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub caption: Caption,
    pub rule: String,
    pub state: CandidateState,
}

impl Candidate {
    pub fn hypothesis(&self) -> Option<&Hypothesis> {
        match &self.state {
            CandidateState::Measured { hypothesis } => Some(hypothesis),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub origin: String,
    pub origin_caption: Caption,
    pub budget: usize,
    pub candidates: Vec<Candidate>,
    /// Index of the best measured candidate; `None` means the origin.
    pub best: Option<usize>,
}

impl RefinementReport {
    pub fn best_hypothesis(&self) -> Option<&Hypothesis> {
        self.best.and_then(|i| self.candidates[i].hypothesis())
    }

    pub fn measured(&self) -> usize {
        self.candidates.iter().filter(|c| c.hypothesis().is_some()).count()
    }
}

/// Higher rate first; then fewer sentences; then the smaller render.
pub fn rank_hypotheses(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.measurement
        .primary_rate()
        .p
        .total_cmp(&a.measurement.primary_rate().p)
        .then_with(|| a.caption.len().cmp(&b.caption.len()))
        .then_with(|| a.caption.render().cmp(&b.caption.render()))
}

/// Argmax over measured candidates.
pub fn best_candidate(candidates: &[Candidate]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.hypothesis().map(|h| (i, h)))
        .min_by(|(_, a), (_, b)| rank_hypotheses(a, b))
        .map(|(i, _)| i)
}

/// Measures `caption` against `baseline` with the caption's own seed
/// stream.
pub async fn measure_caption(
    engine: &Engine,
    caption: &Caption,
    label: &LabelId,
    target: Option<&LabelId>,
    baseline: (&str, &BaselineResult),
    origin: Origin,
    progress: &Progress,
) -> Result<Hypothesis> {
    let cfg = engine.config();
    let seed = stream_seed(cfg.seed, MEASURE_STAGE, label, caption);
    measure_hypothesis(
        engine,
        caption,
        label,
        target,
        &baseline.1.policy,
        &baseline.1.stop,
        seed,
        baseline,
        origin,
        progress,
    )
    .await
}

/// Runs the configured rules in order, each on the best caption so far
/// (the origin to begin with), measuring at most `budget` candidates.
pub async fn refine(
    engine: &Engine,
    origin: (&str, &Hypothesis),
    baseline: (&str, &BaselineResult),
    budget: usize,
    progress: &Progress,
) -> Result<RefinementReport> {
    if budget == 0 {
        return Err(EngineError::Invalid("refinement budget must be at least 1".into()));
    }
    let (origin_id, hyp) = origin;
    let mut report = RefinementReport {
        origin: origin_id.to_string(),
        origin_caption: hyp.caption.clone(),
        budget,
        candidates: Vec::new(),
        best: None,
    };
    if hyp.caption.is_empty() {
        return Ok(report);
    }
    let mut seen: BTreeSet<String> = BTreeSet::from([hyp.caption.render()]);
    let mut used = 0;
    for name in &engine.config().refine_rules {
        let rule = engine.rules().get(name)?;
        let from = report
            .best_hypothesis()
            .map(|h| h.caption.clone())
            .unwrap_or_else(|| hyp.caption.clone());
        let fresh: Vec<Caption> = rule
            .rewrite(&from, engine.lexicon())
            .into_iter()
            .filter(|c| seen.insert(c.render()))
            .collect();
        let take = fresh.len().min(budget - used);
        used += take;
        let results = join_all(fresh[..take].iter().map(|c| {
            let origin = Origin::Refined {
                from: origin_id.to_string(),
                rule: name.clone(),
            };
            measure_caption(engine, c, &hyp.label, hyp.target.as_ref(), baseline, origin, progress)
        }))
        .await;
        for (i, caption) in fresh.into_iter().enumerate() {
            let state = match results.get(i) {
                None => CandidateState::Unmeasured,
                Some(Ok(h)) => CandidateState::Measured {
                    hypothesis: Box::new(h.clone()),
                },
                Some(Err(e)) => {
                    tracing::warn!(caption = %caption.render(), error = %e, "candidate measurement failed");
                    CandidateState::Failed { error: e.to_string() }
                }
            };
            report.candidates.push(Candidate {
                caption,
                rule: name.clone(),
                state,
            });
        }
        report.best = best_candidate(&report.candidates);
    }
    Ok(report)
}

/// Measures a user-entered caption, which must start with the label's
/// base prompt.
pub async fn counterfactual(
    engine: &Engine,
    text: &str,
    label: &LabelId,
    target: Option<&LabelId>,
    baseline: (&str, &BaselineResult),
    progress: &Progress,
) -> Result<Hypothesis> {
    let caption = Caption::parse_for_label(text, label, engine.hierarchy())?;
    measure_caption(engine, &caption, label, target, baseline, Origin::Manual, progress).await
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn drop_examples() {
        assert_eq!(
            drop_adjectives("it is on a yellow flower.", &default_lexicon()),
            vec!["it is on a flower."]
        );
        assert!(drop_adjectives("it is in a net.", &lex(&["red", "yellow"])).is_empty());
        assert_eq!(
            drop_adjectives("a big red ball.", &lex(&["big", "red"])),
            vec!["a red ball.", "a big ball.", "a ball."]
        );
    }

    #[test]
    fn lexicon_size() {
        let n = default_lexicon().len();
        assert!((100..=130).contains(&n), "{n}");
    }

    #[test]
    fn ablation_keeps_order() {
        let c = Caption::new("a realistic photograph of a fly (insect).", &["b is here.", "a is here."]);
        let out = ablate_sentences(&c).unwrap();
        assert_eq!(out[0].sentences(), ["b is here."]);
        assert_eq!(out[1].sentences(), ["a is here."]);
        assert!(ablate_sentences(&c.base_only()).is_err());
        assert_eq!(ablate_sentences(&c.truncated(1)).unwrap(), vec![c.truncated(1)]);
    }

    #[test]
    fn registry_rewrites_every_sentence() {
        let reg = RewriteRegistry::default();
        let c = Caption::new("a realistic photograph of a fly (insect).", &["a red cup.", "a big dog."]);
        let out = reg.get("drop-adjectives").unwrap().rewrite(&c, &default_lexicon());
        let renders: Vec<String> = out.iter().map(|c| c.sentences().join(" ")).collect();
        assert_eq!(renders, ["a cup. a big dog.", "a red cup. a dog."]);
        assert!(reg.get("paraphrase").is_err());
    }
}
