use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use spurfinder_core::{LabelId, Sample};
use spurfinder_gateway::CLUSTER_SPACE;

use crate::error::{EngineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub predicted_label: LabelId,
    pub members: Vec<Sample>,
    /// Mean of the members' cluster-space embeddings.
    pub centroid: Vec<f64>,
}

/// `1 - cos(a, b)`; a zero vector is treated as orthogonal to everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Average-linkage agglomeration of one predicted-label group. Returns
/// member index lists. Merging continues while the closest pair is within
/// `tau` or there are more than `max_clusters` clusters.
fn agglomerate(vectors: &[&[f64]], tau: f64, max_clusters: usize) -> Vec<Vec<usize>> {
    let n = vectors.len();
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(vectors[i], vectors[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut alive = n;
    while alive > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if clusters[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if clusters[j].is_none() {
                    continue;
                }
                if best.is_none_or(|(d, _, _)| dist[i][j] < d) {
                    best = Some((dist[i][j], i, j));
                }
            }
        }
        let (d, i, j) = best.expect("two live clusters");
        if d > tau && alive <= max_clusters {
            break;
        }
        let ni = clusters[i].as_ref().unwrap().len() as f64;
        let nj = clusters[j].as_ref().unwrap().len() as f64;
        for k in 0..n {
            if k == i || k == j || clusters[k].is_none() {
                continue;
            }
            let merged = (ni * dist[i][k] + nj * dist[j][k]) / (ni + nj);
            dist[i][k] = merged;
            dist[k][i] = merged;
        }
        let moved = clusters[j].take().unwrap();
        clusters[i].as_mut().unwrap().extend(moved);
        alive -= 1;
    }
    clusters
        .into_iter()
        .flatten()
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect()
}

/// Splits failures by top-1 label, then merges within each group by
/// average linkage on cosine distance. Groups come out in label order;
/// clusters within a group by size descending, then smallest member hash.
pub fn cluster_failures(failures: &[Sample], tau: f64, max_clusters: usize) -> Result<Vec<Cluster>> {
    if !(0.0..=2.0).contains(&tau) {
        return Err(EngineError::Invalid(format!("tau {tau} outside [0, 2]")));
    }
    if max_clusters == 0 {
        return Err(EngineError::Invalid("max-clusters must be at least 1".into()));
    }
    let mut groups: BTreeMap<&LabelId, Vec<(&Sample, &[f64])>> = BTreeMap::new();
    for s in failures {
        let pred = s.prediction.as_ref().ok_or_else(|| {
            EngineError::Invalid(format!("sample {} has no prediction", s.image.to_hex()))
        })?;
        let v = s.embedding(CLUSTER_SPACE).ok_or_else(|| {
            EngineError::Invalid(format!("sample {} has no cluster embedding", s.image.to_hex()))
        })?;
        groups.entry(pred.top1()).or_default().push((s, v));
    }

    let mut out = Vec::new();
    for (label, members) in groups {
        let vectors: Vec<&[f64]> = members.iter().map(|(_, v)| *v).collect();
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(EngineError::Invalid(format!(
                "cluster embeddings for `{label}` differ in dimension"
            )));
        }
        let mut group: Vec<Cluster> = agglomerate(&vectors, tau, max_clusters)
            .into_iter()
            .map(|idx| {
                let mut centroid = vec![0.0; dim];
                for &i in &idx {
                    for (c, x) in centroid.iter_mut().zip(vectors[i]) {
                        *c += x;
                    }
                }
                for c in &mut centroid {
                    *c /= idx.len() as f64;
                }
                Cluster {
                    predicted_label: label.clone(),
                    members: idx.iter().map(|&i| members[i].0.clone()).collect(),
                    centroid,
                }
            })
            .collect();
        let min_hash = |c: &Cluster| c.members.iter().map(|s| s.image).min();
        group.sort_by(|a, b| {
            b.members
                .len()
                .cmp(&a.members.len())
                .then_with(|| min_hash(a).cmp(&min_hash(b)))
        });
        out.extend(group);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use spurfinder_core::{Caption, ContentHash, LabelScore, Prediction};

    fn sample(i: u32, top1: &str, v: Vec<f64>) -> Sample {
        let mut s = Sample::new(
            ContentHash::of(&i.to_le_bytes()),
            Caption::from_base("a realistic photograph of a fly (insect)."),
            0,
            i,
        );
        s.prediction = Some(Prediction::new(vec![LabelScore { label: top1.into(), score: 1.0 }]).unwrap());
        s.embeddings.insert(CLUSTER_SPACE.into(), v);
        s
    }

    #[test]
    fn identical_embeddings_give_one_cluster_per_label() {
        let xs: Vec<Sample> = (0..6)
            .map(|i| sample(i, if i % 2 == 0 { "bee" } else { "wasp" }, vec![1.0, 2.0]))
            .collect();
        let cs = cluster_failures(&xs, 0.3, 8).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].predicted_label, LabelId::new("bee"));
        assert!(cs.iter().all(|c| c.members.len() == 3));
    }

    #[test]
    fn orthogonal_embeddings_stay_singletons() {
        let xs: Vec<Sample> = (0..4)
            .map(|i| {
                let mut v = vec![0.0; 4];
                v[i as usize] = 1.0;
                sample(i, "bee", v)
            })
            .collect();
        assert_eq!(cluster_failures(&xs, 0.5, 8).unwrap().len(), 4);
        // the cap forces merges regardless of tau
        assert_eq!(cluster_failures(&xs, 0.5, 2).unwrap().len(), 2);
    }

    #[test]
    fn rejects_bad_tau_and_missing_embedding() {
        let s = sample(0, "bee", vec![1.0]);
        assert!(cluster_failures(std::slice::from_ref(&s), 2.5, 8).is_err());
        let mut bare = s.clone();
        bare.embeddings.clear();
        assert!(cluster_failures(&[bare], 0.3, 8).is_err());
    }
}
