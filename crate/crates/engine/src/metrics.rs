//! Post-hoc analyses of harvested datasets: transfer to other classifiers,
//! distribution shift (FID/KID), error consistency and nearest neighbors.

use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use spurfinder_core::{is_failure, ContentHash, FailurePolicy, LabelHierarchy, LabelId};
use spurfinder_gateway::{Gateway, FID_SPACE};
use spurfinder_stats::{
    error_consistency, fid, kid, nearest_neighbors, EmbeddingSetStats, KidEstimate, TransferRate,
};

use crate::error::{EngineError, Result};

/// An image to evaluate and its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: ContentHash,
    pub png: Arc<Vec<u8>>,
    pub truth: LabelId,
}

fn classify_k(policy: &FailurePolicy, hierarchy: &LabelHierarchy) -> u32 {
    policy.required_k().max(1).min(hierarchy.leaves().count()) as u32
}

/// Fraction of `dataset` failing under each classifier. Images a
/// classifier cannot handle are excluded and tallied.
pub async fn transfer_matrix(
    dataset: &[LabeledImage],
    classifiers: &[(String, Arc<Gateway>)],
    policy: &FailurePolicy,
    hierarchy: &LabelHierarchy,
) -> Result<Vec<TransferRate>> {
    if dataset.is_empty() {
        return Err(EngineError::Invalid("transfer needs a non-empty dataset".into()));
    }
    let k = classify_k(policy, hierarchy);
    let mut out = Vec::new();
    for (name, gw) in classifiers {
        let preds = join_all(dataset.iter().map(|d| gw.classify(&d.png, k))).await;
        let (mut failures, mut evaluated, mut excluded) = (0, 0, 0);
        for (d, p) in dataset.iter().zip(preds) {
            match p {
                Ok(p) => {
                    evaluated += 1;
                    if is_failure(&p, &d.truth, policy, hierarchy)? {
                        failures += 1;
                    }
                }
                Err(e) => {
                    tracing::warn!(classifier = %name, image = %d.image.to_hex(), error = %e, "excluded from transfer");
                    excluded += 1;
                }
            }
        }
        out.push(TransferRate::new(name.clone(), failures, evaluated, excluded));
    }
    Ok(out)
}

/// Top-1 correctness of one classifier on every image.
pub async fn correctness(gateway: &Gateway, dataset: &[LabeledImage]) -> Result<Vec<bool>> {
    let preds = join_all(dataset.iter().map(|d| gateway.classify(&d.png, 1))).await;
    dataset
        .iter()
        .zip(preds)
        .map(|(d, p)| Ok(p?.top1() == &d.truth))
        .collect()
}

pub async fn consistency(a: &Gateway, b: &Gateway, dataset: &[LabeledImage]) -> Result<f64> {
    let ca = correctness(a, dataset).await?;
    let cb = correctness(b, dataset).await?;
    Ok(error_consistency(&ca, &cb)?)
}

pub async fn embed_all(gateway: &Gateway, pngs: &[Arc<Vec<u8>>], space: &str) -> Result<Vec<Vec<f64>>> {
    join_all(pngs.iter().map(|p| gateway.embed(p, space)))
        .await
        .into_iter()
        .map(|r| r.map_err(EngineError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub n_a: usize,
    pub n_b: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kid: Option<KidEstimate>,
}

/// FID between two image sets in the gateway's "fid" space.
pub async fn fid_between(gateway: &Gateway, a: &[Arc<Vec<u8>>], b: &[Arc<Vec<u8>>]) -> Result<ShiftReport> {
    let ea = embed_all(gateway, a, FID_SPACE).await?;
    let eb = embed_all(gateway, b, FID_SPACE).await?;
    let v = fid(&EmbeddingSetStats::from_vectors(&ea)?, &EmbeddingSetStats::from_vectors(&eb)?)?;
    Ok(ShiftReport {
        n_a: ea.len(),
        n_b: eb.len(),
        fid: Some(v),
        kid: None,
    })
}

pub async fn kid_between(
    gateway: &Gateway,
    a: &[Arc<Vec<u8>>],
    b: &[Arc<Vec<u8>>],
    block_size: usize,
) -> Result<ShiftReport> {
    let ea = embed_all(gateway, a, FID_SPACE).await?;
    let eb = embed_all(gateway, b, FID_SPACE).await?;
    Ok(ShiftReport {
        n_a: ea.len(),
        n_b: eb.len(),
        fid: None,
        kid: Some(kid(&ea, &eb, block_size)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub image: ContentHash,
    pub label: LabelId,
    pub similarity: f64,
}

/// The `k` corpus images closest to `query` in `space`, optionally only
/// those labeled `filter`.
pub async fn nearest(
    gateway: &Gateway,
    query: &[u8],
    corpus: &[LabeledImage],
    space: &str,
    k: usize,
    filter: Option<&LabelId>,
) -> Result<Vec<Neighbor>> {
    let q = gateway.embed(query, space).await?;
    let pngs: Vec<Arc<Vec<u8>>> = corpus.iter().map(|c| c.png.clone()).collect();
    let vectors = embed_all(gateway, &pngs, space).await?;
    let indexed: Vec<(usize, Vec<f64>)> = vectors.into_iter().enumerate().collect();
    let hits = nearest_neighbors(&q, &indexed, k, |&i| filter.is_none_or(|f| &corpus[i].truth == f))?;
    Ok(hits
        .into_iter()
        .map(|(i, similarity)| Neighbor {
            image: corpus[i].image,
            label: corpus[i].truth.clone(),
            similarity,
        })
        .collect())
}

/// A stored metric result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "lowercase")]
pub enum MetricReport {
    Fid { dataset: String, reference: String, report: ShiftReport },
    Kid { dataset: String, reference: String, report: ShiftReport },
    Transfer { dataset: String, policy: FailurePolicy, rates: Vec<TransferRate> },
    Consistency { dataset: String, a: String, b: String, n: usize, kappa: f64 },
    Nn { query: ContentHash, dataset: String, neighbors: Vec<Neighbor> },
}
