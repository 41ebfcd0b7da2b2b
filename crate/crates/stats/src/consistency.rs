use crate::error::StatsError;

/// Chance-corrected agreement of two correctness patterns:
/// kappa = (c_obs − c_exp) / (1 − c_exp) with
/// c_exp = pa·pb + (1 − pa)(1 − pb).
pub fn error_consistency(correct_a: &[bool], correct_b: &[bool]) -> Result<f64, StatsError> {
    if correct_a.len() != correct_b.len() {
        return Err(StatsError::LengthMismatch(correct_a.len(), correct_b.len()));
    }
    if correct_a.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = correct_a.len() as f64;
    let agree = correct_a.iter().zip(correct_b).filter(|(a, b)| a == b).count() as f64;
    let pa = correct_a.iter().filter(|c| **c).count() as f64 / n;
    let pb = correct_b.iter().filter(|c| **c).count() as f64 / n;
    let c_obs = agree / n;
    let c_exp = pa * pb + (1.0 - pa) * (1.0 - pb);
    if c_exp >= 1.0 {
        return Err(StatsError::DegenerateConsistency);
    }
    Ok((c_obs - c_exp) / (1.0 - c_exp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_vectors() {
        let v = [true, false, true, true, false];
        assert_eq!(error_consistency(&v, &v), Ok(1.0));
    }

    #[test]
    fn anti_aligned_half_accuracy() {
        let a: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let b: Vec<bool> = a.iter().map(|c| !c).collect();
        assert_eq!(error_consistency(&a, &b), Ok(-1.0));
    }

    #[test]
    fn independent_models_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.7)).collect();
        let b: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.6)).collect();
        let k = error_consistency(&a, &b).unwrap();
        assert!(k.abs() < 0.05, "{k}");
    }

    #[test]
    fn degenerate_and_mismatched() {
        assert_eq!(
            error_consistency(&[true, true], &[true, true]),
            Err(StatsError::DegenerateConsistency)
        );
        assert_eq!(
            error_consistency(&[true], &[true, false]),
            Err(StatsError::LengthMismatch(1, 2))
        );
        assert_eq!(error_consistency(&[], &[]), Err(StatsError::EmptySample));
    }

    proptest! {
        #[test]
        fn symmetric(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let a: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            match (error_consistency(&a, &b), error_consistency(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
                }
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                other => prop_assert!(false, "asymmetric outcome {:?}", other),
            }
        }
    }
}
