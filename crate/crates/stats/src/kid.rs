use serde::{Deserialize, Serialize};

use crate::error::StatsError;

pub const DEFAULT_BLOCK_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidEstimate {
    pub value: f64,
    pub stderr: f64,
    pub blocks: usize,
}

/// Cubic polynomial kernel with dimension normalization.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased MMD² between two equally sized blocks.
fn block_mmd2<V: AsRef<[f64]>>(a: &[V], b: &[V]) -> f64 {
    let m = a.len() as f64;
    let mut kxx = 0.0;
    let mut kyy = 0.0;
    let mut kxy = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                kxx += poly_kernel(a[i].as_ref(), a[j].as_ref());
                kyy += poly_kernel(b[i].as_ref(), b[j].as_ref());
            }
            kxy += poly_kernel(a[i].as_ref(), b[j].as_ref());
        }
    }
    kxx / (m * (m - 1.0)) + kyy / (m * (m - 1.0)) - 2.0 * kxy / (m * m)
}

/// Kernel distance averaged over disjoint blocks of `block_size` vectors;
/// the standard error is the spread of the block estimates.
pub fn kid<V: AsRef<[f64]>>(a: &[V], b: &[V], block_size: usize) -> Result<KidEstimate, StatsError> {
    let need = 2 * block_size.max(1);
    if block_size < 2 {
        return Err(StatsError::TooFewVectors { need: 4, got: block_size * 2 });
    }
    for set in [a, b] {
        if set.len() < need {
            return Err(StatsError::TooFewVectors { need, got: set.len() });
        }
    }
    let d = a[0].as_ref().len();
    for v in a.iter().chain(b) {
        let v = v.as_ref();
        if v.len() != d {
            return Err(StatsError::DimensionMismatch(d, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite("embedding"));
        }
    }
    let blocks = a.len().min(b.len()) / block_size;
    let values: Vec<f64> = (0..blocks)
        .map(|i| {
            let r = i * block_size..(i + 1) * block_size;
            block_mmd2(&a[r.clone()], &b[r])
        })
        .collect();
    let mean = values.iter().sum::<f64>() / blocks as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (blocks as f64 - 1.0);
    Ok(KidEstimate {
        value: mean,
        stderr: (var / blocks as f64).sqrt(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, shift: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z + shift
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn point_masses_match_kernel_identity() {
        let v = vec![0.5, -1.0, 2.0];
        let w = vec![1.5, 0.0, -0.5];
        let a = vec![v.clone(); 8];
        let b = vec![w.clone(); 8];
        let got = kid(&a, &b, 4).unwrap();
        let want = poly_kernel(&v, &v) + poly_kernel(&w, &w) - 2.0 * poly_kernel(&v, &w);
        assert!((got.value - want).abs() < 1e-12);
        assert_eq!(got.stderr, 0.0);
    }

    #[test]
    fn null_case_within_three_stderr() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = gaussian(2000, 8, 0.0, &mut rng);
        let b = gaussian(2000, 8, 0.0, &mut rng);
        let k = kid(&a, &b, DEFAULT_BLOCK_SIZE).unwrap();
        assert!(k.value.abs() <= 3.0 * k.stderr, "{k:?}");
    }

    #[test]
    fn shifted_distribution_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = gaussian(400, 8, 0.0, &mut rng);
        let b = gaussian(400, 8, 0.5, &mut rng);
        let k = kid(&a, &b, DEFAULT_BLOCK_SIZE).unwrap();
        assert!(k.value > 3.0 * k.stderr, "{k:?}");
    }

    #[test]
    fn block_permutation_leaves_value_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = gaussian(400, 4, 0.0, &mut rng);
        let b = gaussian(400, 4, 0.2, &mut rng);
        let base = kid(&a, &b, 100).unwrap();
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut rng);
        let pa: Vec<Vec<f64>> = order.iter().flat_map(|&i| a[i * 100..(i + 1) * 100].to_vec()).collect();
        let pb: Vec<Vec<f64>> = order.iter().flat_map(|&i| b[i * 100..(i + 1) * 100].to_vec()).collect();
        let perm = kid(&pa, &pb, 100).unwrap();
        assert!((base.value - perm.value).abs() < 1e-12);
        assert!((base.stderr - perm.stderr).abs() < 1e-12);
    }

    #[test]
    fn too_small() {
        let a = vec![vec![0.0]; 150];
        assert_eq!(
            kid(&a, &a, 100),
            Err(StatsError::TooFewVectors { need: 200, got: 150 })
        );
    }
}
