use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::StatsError;

/// Diagonal jitter added to both covariances when either set has no more
/// vectors than dimensions.
pub const RANK_DEFICIENT_JITTER: f64 = 1e-6;

/// Gaussian fit of an embedding set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSetStats {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Row-major d×d, symmetric.
    pub covariance: Vec<f64>,
}

impl EmbeddingSetStats {
    /// Mean and unbiased (n − 1) covariance of `vectors`.
    pub fn from_vectors<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self, StatsError> {
        let n = vectors.len();
        if n < 2 {
            return Err(StatsError::TooFewVectors { need: 2, got: n });
        }
        let d = vectors[0].as_ref().len();
        let mut mean = vec![0.0; d];
        for v in vectors {
            let v = v.as_ref();
            if v.len() != d {
                return Err(StatsError::DimensionMismatch(d, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(StatsError::NonFinite("embedding"));
            }
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; d * d];
        for v in vectors {
            let v = v.as_ref();
            for i in 0..d {
                let di = v[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (v[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let c = cov[i * d + j] / (n as f64 - 1.0);
                cov[i * d + j] = c;
                cov[j * d + i] = c;
            }
        }
        Ok(EmbeddingSetStats {
            n,
            mean,
            covariance: cov,
        })
    }

    /// Population statistics given directly.
    pub fn from_moments(n: usize, mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self, StatsError> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(StatsError::DimensionMismatch(d * d, covariance.len()));
        }
        Ok(EmbeddingSetStats { n, mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let m = DMatrix::from_row_slice(d, d, &self.covariance);
        (&m + m.transpose()) * 0.5
    }

    fn check(&self) -> Result<(), StatsError> {
        if self
            .mean
            .iter()
            .chain(&self.covariance)
            .any(|x| !x.is_finite())
        {
            return Err(StatsError::NonFinite("embedding statistics"));
        }
        Ok(())
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussian fits:
/// ‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^½).
///
/// The trace of the cross term is taken as Σ √λ over the eigenvalues of the
/// symmetric matrix √Σa · Σb · √Σa, clamped at zero.
pub fn fid(a: &EmbeddingSetStats, b: &EmbeddingSetStats) -> Result<f64, StatsError> {
    if a.dim() != b.dim() {
        return Err(StatsError::DimensionMismatch(a.dim(), b.dim()));
    }
    a.check()?;
    b.check()?;
    let d = a.dim();
    let mut sa = a.cov_matrix();
    let mut sb = b.cov_matrix();
    if a.n <= d || b.n <= d {
        for i in 0..d {
            sa[(i, i)] += RANK_DEFICIENT_JITTER;
            sb[(i, i)] += RANK_DEFICIENT_JITTER;
        }
    }
    let diff = DVector::from_column_slice(&a.mean) - DVector::from_column_slice(&b.mean);
    let root_a = psd_sqrt(&sa);
    let inner = &root_a * &sb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let value = diff.norm_squared() + sa.trace() + sb.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(StatsError::NonFinite("fid"));
    }
    Ok(value.max(0.0))
}
