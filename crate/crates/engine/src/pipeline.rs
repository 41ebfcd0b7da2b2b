//! The staged discovery pipeline. Every stage is keyed in the run store,
//! so rerunning a command after a crash picks up where it stopped.

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use spurfinder_core::{Caption, ContentHash, LabelId};
use spurfinder_gateway::CLUSTER_SPACE;
use spurfinder_store::RecordKind;

use crate::datasetgen::{caption_seed_corpus, harvest, AdversarialDataset, SeedImage};
use crate::discovery::{assemble_caption, cluster_failures, sample_baseline, BaselineResult, Cluster, Hypothesis, Origin};
use crate::engine::{Engine, Stored};
use crate::error::{EngineError, Result};
use crate::metrics::MetricReport;
use crate::progress::Progress;
use crate::refine::{counterfactual, measure_caption, rank_hypotheses, refine, RefinementReport};
use crate::seeds::stream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub baseline_ref: String,
    pub clusters: Vec<Cluster>,
}

/// Id of cluster `index` within the set stored as `set_id`.
pub fn cluster_id(set_id: &str, index: usize) -> String {
    format!("{set_id}.{index}")
}

/// Splits a cluster id into its set id and index.
pub fn parse_cluster_id(id: &str) -> Option<(&str, usize)> {
    let (set, index) = id.rsplit_once('.')?;
    Some((set, index.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryReport {
    pub baseline: Stored<BaselineResult>,
    pub clusters: Stored<ClusterSet>,
    pub hypotheses: Vec<Stored<Hypothesis>>,
    pub refinement: Option<Stored<RefinementReport>>,
    pub refined: Option<Stored<Hypothesis>>,
}

impl DiscoveryReport {
    /// The refined hypothesis when refinement found one, else the best
    /// discovered one.
    pub fn best(&self) -> Option<&Stored<Hypothesis>> {
        self.refined.as_ref().or_else(|| {
            self.hypotheses
                .iter()
                .min_by(|a, b| rank_hypotheses(&a.value, &b.value))
        })
    }
}

fn target_key(target: Option<&LabelId>) -> &str {
    target.map_or("-", LabelId::as_str)
}

pub async fn baseline(
    engine: &Engine,
    label: &LabelId,
    target: Option<&LabelId>,
    progress: &Progress,
) -> Result<Stored<BaselineResult>> {
    let cfg = engine.config();
    let key = format!("baseline/{label}/{}", target_key(target));
    engine
        .stage(RecordKind::Baseline, &key, async {
            let base = engine.base_caption(label)?;
            let seed = stream_seed(cfg.seed, "baseline", label, &base);
            sample_baseline(engine, label, target, &cfg.policy, &cfg.stop, seed, progress).await
        })
        .await
}

pub async fn clusters(engine: &Engine, baseline: &Stored<BaselineResult>) -> Result<Stored<ClusterSet>> {
    let cfg = engine.config();
    let key = format!("clusters/{}", baseline.id);
    engine
        .stage(RecordKind::Cluster, &key, async {
            let mut failures = baseline.value.failures.clone();
            let images = failures
                .iter()
                .map(|f| engine.image(&f.image))
                .collect::<Result<Vec<_>>>()?;
            let vectors = join_all(images.iter().map(|png| engine.gateway().embed(png, CLUSTER_SPACE))).await;
            for (f, v) in failures.iter_mut().zip(vectors) {
                f.embeddings.insert(CLUSTER_SPACE.into(), v?);
            }
            Ok(ClusterSet {
                baseline_ref: baseline.id.clone(),
                clusters: cluster_failures(&failures, cfg.tau, cfg.max_clusters)?,
            })
        })
        .await
}

/// Clusters worth captioning: large enough, those predicting the target
/// first, then by size. At most `max-hypotheses`.
pub fn select_clusters(set: &ClusterSet, target: Option<&LabelId>, engine: &Engine) -> Vec<usize> {
    let cfg = engine.config();
    let mut idx: Vec<usize> = (0..set.clusters.len())
        .filter(|&i| set.clusters[i].members.len() >= cfg.min_cluster_size)
        .collect();
    idx.sort_by_key(|&i| {
        let c = &set.clusters[i];
        (target.is_some_and(|t| t != &c.predicted_label), std::cmp::Reverse(c.members.len()), i)
    });
    idx.truncate(cfg.max_hypotheses);
    idx
}

/// Assembles a caption for one cluster and measures it.
pub async fn discovered(
    engine: &Engine,
    baseline: &Stored<BaselineResult>,
    set: &Stored<ClusterSet>,
    index: usize,
    progress: &Progress,
) -> Result<Stored<Hypothesis>> {
    let key = format!("discovered/{}/{index}", set.id);
    engine
        .stage(RecordKind::Hypothesis, &key, async {
            let b = &baseline.value;
            let cluster = &set.value.clusters[index];
            let assembly =
                assemble_caption(engine, cluster, &b.caption, engine.config().caption_sentences).await?;
            let origin = Origin::Cluster {
                cluster: cluster_id(&set.id, index),
            };
            let mut h = measure_caption(
                engine,
                &assembly.caption,
                &b.label,
                b.target.as_ref(),
                (&baseline.id, b),
                origin,
                progress,
            )
            .await?;
            h.assembly = Some(assembly);
            Ok(h)
        })
        .await
}

/// Refines one stored hypothesis and stores the winning candidate as a
/// hypothesis of its own.
pub async fn refine_stored(
    engine: &Engine,
    hypothesis: &Stored<Hypothesis>,
    baseline: &Stored<BaselineResult>,
    progress: &Progress,
) -> Result<(Stored<RefinementReport>, Option<Stored<Hypothesis>>)> {
    let budget = engine.config().refine_budget;
    let report = engine
        .stage(RecordKind::Refinement, &format!("refine/{}", hypothesis.id), async {
            refine(
                engine,
                (&hypothesis.id, &hypothesis.value),
                (&baseline.id, &baseline.value),
                budget,
                progress,
            )
            .await
        })
        .await?;
    let refined = match report.value.best_hypothesis() {
        Some(best) => Some(
            engine
                .stage(RecordKind::Hypothesis, &format!("refined/{}", report.id), async { Ok(best.clone()) })
                .await?,
        ),
        None => None,
    };
    Ok((report, refined))
}

/// Baseline, clustering, assembly, measurement and refinement of the most
/// promising hypothesis.
pub async fn discover(
    engine: &Engine,
    label: &LabelId,
    target: Option<&LabelId>,
    progress: &Progress,
) -> Result<DiscoveryReport> {
    let base = baseline(engine, label, target, progress).await?;
    let set = clusters(engine, &base).await?;
    let mut hypotheses = Vec::new();
    for i in select_clusters(&set.value, target, engine) {
        hypotheses.push(discovered(engine, &base, &set, i, progress).await?);
    }
    let top = hypotheses
        .iter()
        .filter(|h| !h.value.caption.is_empty())
        .min_by(|a, b| rank_hypotheses(&a.value, &b.value))
        .cloned();
    let (refinement, refined) = match top {
        Some(top) => {
            let (r, h) = refine_stored(engine, &top, &base, progress).await?;
            (Some(r), h)
        }
        None => (None, None),
    };
    Ok(DiscoveryReport {
        baseline: base,
        clusters: set,
        hypotheses,
        refinement,
        refined,
    })
}

/// Measures a user caption against the (possibly stored) baseline.
pub async fn measure(
    engine: &Engine,
    text: &str,
    label: &LabelId,
    target: Option<&LabelId>,
    progress: &Progress,
) -> Result<Stored<Hypothesis>> {
    let caption = Caption::parse_for_label(text, label, engine.hierarchy())?;
    let base = baseline(engine, label, target, progress).await?;
    let key = format!("manual/{label}/{}/{}", target_key(target), caption.render());
    engine
        .stage(RecordKind::Hypothesis, &key, async {
            counterfactual(engine, text, label, target, (&base.id, &base.value), progress).await
        })
        .await
}

/// Loads a stored hypothesis and its baseline, then refines it.
pub async fn refine_by_id(
    engine: &Engine,
    hypothesis_id: &str,
    progress: &Progress,
) -> Result<(Stored<RefinementReport>, Option<Stored<Hypothesis>>)> {
    let hypothesis: Stored<Hypothesis> = load(engine, hypothesis_id, RecordKind::Hypothesis)?;
    let baseline: Stored<BaselineResult> = load(engine, &hypothesis.value.baseline_ref, RecordKind::Baseline)?;
    refine_stored(engine, &hypothesis, &baseline, progress).await
}

/// Decodes the record `id`, which must be of `kind`.
pub fn load<T: serde::de::DeserializeOwned>(engine: &Engine, id: &str, kind: RecordKind) -> Result<Stored<T>> {
    let rec = engine
        .record(id)
        .filter(|r| r.kind == kind)
        .ok_or_else(|| EngineError::Invalid(format!("no {kind} record `{id}` in this run")))?;
    Ok(Stored {
        id: rec.id(),
        value: rec.decode()?,
    })
}

/// Captions a seed corpus and harvests failures from every caption.
pub async fn harvest_seeds(
    engine: &Engine,
    name: &str,
    seeds: &[SeedImage],
    progress: &Progress,
) -> Result<Stored<AdversarialDataset>> {
    let cfg = engine.config();
    let mut listing = String::new();
    for s in seeds {
        listing.push_str(&format!("{}\t{}\n", s.truth, ContentHash::of(&s.png).to_hex()));
    }
    let key = format!("harvest/{name}/{}", ContentHash::of(listing.as_bytes()).to_hex());
    engine
        .stage(RecordKind::Harvest, &key, async {
            let corpus = caption_seed_corpus(engine, seeds, cfg.harvest.max_caption_sentences).await?;
            harvest(engine, name, &corpus.captions, &cfg.harvest, &cfg.policy, cfg.seed, progress).await
        })
        .await
}

/// Computes a metric once per `key` and stores it.
pub async fn metric<F>(engine: &Engine, key: &str, compute: F) -> Result<Stored<MetricReport>>
where
    F: std::future::Future<Output = Result<MetricReport>>,
{
    engine.stage(RecordKind::Metric, &format!("metric/{key}"), compute).await
}
