use crate::error::StatsError;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

/// The `k` corpus ids most similar to `query` by cosine similarity, best
/// first; ties go to the smaller id. Zero vectors and entries rejected by
/// `keep` are skipped.
pub fn nearest_neighbors<Id, V, F>(
    query: &[f64],
    corpus: &[(Id, V)],
    k: usize,
    keep: F,
) -> Result<Vec<(Id, f64)>, StatsError>
where
    Id: Ord + Clone,
    V: AsRef<[f64]>,
    F: Fn(&Id) -> bool,
{
    if k == 0 {
        return Err(StatsError::ZeroK);
    }
    if is_zero(query) {
        return Err(StatsError::ZeroQuery);
    }
    let mut scored = Vec::new();
    for (id, v) in corpus {
        let v = v.as_ref();
        if v.len() != query.len() {
            return Err(StatsError::DimensionMismatch(query.len(), v.len()));
        }
        if is_zero(v) || !keep(id) {
            continue;
        }
        scored.push((id.clone(), cosine_similarity(query, v)));
    }
    if scored.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
