use std::collections::BTreeSet;
use std::future::Future;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use spurfinder_core::Caption;

use super::cluster::Cluster;
use crate::engine::Engine;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub sentence: String,
    /// Summed score after adding `sentence`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    pub caption: Caption,
    /// Deduplicated, sorted sentence pool.
    pub pool: Vec<String>,
    /// Summed score of the base caption alone.
    pub base_score: f64,
    pub steps: Vec<GreedyStep>,
    /// Set when captioning produced no sentences at all.
    pub degenerate: bool,
}

/// Greedy selection of up to `k` sentences from `pool`.
///
/// Each step scores every unchosen candidate appended to the current
/// selection and keeps the best; a candidate must beat the current score
/// strictly, and among equal scores the lexicographically smallest wins.
pub async fn greedy_assemble<F, Fut>(pool: &[String], k: usize, mut score: F) -> Result<(f64, Vec<GreedyStep>)>
where
    F: FnMut(Vec<String>) -> Fut,
    Fut: Future<Output = Result<f64>>,
{
    let pool: BTreeSet<&String> = pool.iter().collect();
    let mut chosen: Vec<String> = Vec::new();
    let base = score(Vec::new()).await?;
    let mut current = base;
    let mut steps = Vec::new();
    while chosen.len() < k {
        let mut best: Option<(f64, &String)> = None;
        for cand in &pool {
            if chosen.contains(cand) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push((*cand).clone());
            let s = score(trial).await?;
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, cand));
            }
        }
        match best {
            Some((s, cand)) if s > current => {
                chosen.push(cand.clone());
                current = s;
                steps.push(GreedyStep {
                    sentence: cand.clone(),
                    score: s,
                });
            }
            _ => break,
        }
    }
    Ok((base, steps))
}

/// Captions every cluster member, pools the sentences and greedily builds
/// the caption that best explains the cluster as a whole.
pub async fn assemble_caption(engine: &Engine, cluster: &Cluster, base: &Caption, k: usize) -> Result<Assembly> {
    let cfg = engine.config();
    let images = cluster
        .members
        .iter()
        .map(|m| engine.image(&m.image))
        .collect::<Result<Vec<_>>>()?;
    let prefix = base.render();
    let captions = join_all(images.iter().map(|png| {
        engine
            .gateway()
            .caption(png, &prefix, cfg.caption_request_sentences, &cfg.fewshot_profile)
    }))
    .await;
    let mut pool = BTreeSet::new();
    for c in captions {
        match c {
            Ok(c) => pool.extend(c.sentences().iter().cloned()),
            Err(e) if e.is_service_failure() => tracing::warn!(error = %e, "member captioning failed"),
            Err(e) => return Err(e.into()),
        }
    }
    let pool: Vec<String> = pool.into_iter().collect();
    let degenerate = pool.is_empty();
    if degenerate {
        tracing::warn!(label = %cluster.predicted_label, "empty sentence pool, keeping the base caption");
    }

    let (base_score, steps) = greedy_assemble(&pool, k, |sentences| {
        let caption = Caption::new(base.base(), &sentences);
        let images = &images;
        async move {
            let scores = join_all(images.iter().map(|png| engine.gateway().score(png, &caption))).await;
            let mut total = 0.0;
            for s in scores {
                total += s?;
            }
            Ok(total)
        }
    })
    .await?;
    let chosen: Vec<&str> = steps.iter().map(|s| s.sentence.as_str()).collect();
    Ok(Assembly {
        caption: Caption::new(base.base(), &chosen),
        pool,
        base_score,
        steps,
        degenerate,
    })
}
