use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::StatsError;

/// Exact enumeration is used when the pooled sample has at most this many
/// values and no ties.
pub const EXACT_MAX_TOTAL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// `ys` tend to be larger than `xs`.
    Greater,
    /// `ys` tend to be smaller than `xs`.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Pairs (x, y) with x > y, ties counting one half.
    pub u_x: f64,
    pub u_y: f64,
    pub p: f64,
    pub method: Method,
}

/// Midranks of the pooled sample, plus tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of arrangements of `n` x-values and `m` y-values producing each
/// value of U_x, for U_x = 0..=n·m.
fn u_distribution(n: usize, m: usize) -> Vec<f64> {
    // table[i][j][u]: arrangements of i xs and j ys with U_x = u; placing
    // the largest value as an x adds j to U_x, as a y adds nothing
    let max_u = n * m;
    let mut prev: Vec<Vec<f64>> = (0..=m)
        .map(|_| {
            let mut v = vec![0.0; max_u + 1];
            v[0] = 1.0;
            v
        })
        .collect();
    for _ in 1..=n {
        let mut cur: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; m + 1];
        cur[0][0] = 1.0;
        for j in 1..=m {
            for u in 0..=max_u {
                let mut c = cur[j - 1][u];
                if u >= j {
                    c += prev[j][u - j];
                }
                cur[j][u] = c;
            }
        }
        prev = cur;
    }
    prev.swap_remove(m)
}

/// Mann-Whitney U test of `xs` against `ys`.
pub fn mann_whitney(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<MannWhitney, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("mann-whitney sample"));
    }
    let n = xs.len();
    let m = ys.len();
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_x: f64 = ranks[..n].iter().sum();
    let u_x = rank_sum_x - (n * (n + 1)) as f64 / 2.0;
    let nm = (n * m) as f64;
    let u_y = nm - u_x;

    if n + m <= EXACT_MAX_TOTAL && ties.is_empty() {
        let dist = u_distribution(n, m);
        let total: f64 = dist.iter().sum();
        let u = u_x.round() as usize;
        let le: f64 = dist[..=u].iter().sum::<f64>() / total;
        let ge: f64 = dist[u..].iter().sum::<f64>() / total;
        let p = match alternative {
            Alternative::Greater => le,
            Alternative::Less => ge,
            Alternative::TwoSided => (2.0 * le.min(ge)).min(1.0),
        };
        return Ok(MannWhitney {
            u_x,
            u_y,
            p,
            method: Method::Exact,
        });
    }

    let big_n = (n + m) as f64;
    let tie_term: f64 = ties
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / (big_n * (big_n - 1.0));
    let var = nm / 12.0 * ((big_n + 1.0) - tie_term);
    let mean = nm / 2.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let sd = var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        match alternative {
            Alternative::Greater => normal.cdf((u_x - mean + 0.5) / sd),
            Alternative::Less => normal.sf((u_x - mean - 0.5) / sd),
            Alternative::TwoSided => {
                let z = ((u_x - mean).abs() - 0.5).max(0.0) / sd;
                (2.0 * normal.sf(z)).min(1.0)
            }
        }
    };
    Ok(MannWhitney {
        u_x,
        u_y,
        p,
        method: Method::Normal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: every choice of which pooled positions are xs.
    fn enumerate_p(xs: &[f64], ys: &[f64], alt: Alternative) -> f64 {
        let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
        let n = xs.len();
        let total = pooled.len();
        let u_of = |mask: u32| {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (i, v) in pooled.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    a.push(*v)
                } else {
                    b.push(*v)
                }
            }
            let mut u = 0.0;
            for x in &a {
                for y in &b {
                    if x > y {
                        u += 1.0;
                    }
                }
            }
            u
        };
        let observed = u_of((1u32 << n) - 1);
        let (mut le, mut ge, mut count) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let u = u_of(mask);
            count += 1.0;
            if u <= observed {
                le += 1.0;
            }
            if u >= observed {
                ge += 1.0;
            }
        }
        match alt {
            Alternative::Greater => le / count,
            Alternative::Less => ge / count,
            Alternative::TwoSided => (2.0 * (le / count).min(ge / count)).min(1.0),
        }
    }

    #[test]
    fn separated_pair_exact() {
        let r = mann_whitney(&[1.0, 2.0], &[3.0, 4.0], Alternative::Greater).unwrap();
        assert_eq!(r.method, Method::Exact);
        assert_eq!(r.u_x, 0.0);
        assert!((r.p - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_tied_pair_carries_no_evidence() {
        let r = mann_whitney(&[5.0], &[5.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(r.u_x + r.u_y, 1.0);
    }

    #[test]
    fn empty_sample() {
        assert_eq!(
            mann_whitney(&[], &[1.0], Alternative::TwoSided),
            Err(StatsError::EmptySample)
        );
    }

    #[test]
    fn distribution_counts_are_binomial() {
        for n in 1..7 {
            for m in 1..7 {
                let d = u_distribution(n, m);
                let total: f64 = d.iter().sum();
                let mut binom = 1.0;
                for i in 0..n {
                    binom = binom * (n + m - i) as f64 / (i + 1) as f64;
                }
                assert!((total - binom).abs() < 1e-9);
                // symmetric about n·m/2
                for u in 0..=n * m {
                    assert_eq!(d[u], d[n * m - u]);
                }
            }
        }
    }

    #[test]
    fn large_separated_samples_use_normal() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = (10..20).map(f64::from).collect();
        let r = mann_whitney(&xs, &ys, Alternative::TwoSided).unwrap();
        assert_eq!(r.method, Method::Normal);
        assert!(r.p < 0.005, "{}", r.p);
    }

    fn distinct(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..max, 1usize..max)
            .prop_filter("pooled size", move |(n, m)| n + m <= max)
            .prop_flat_map(|(n, m)| {
                Just((0..n + m).map(|i| i as f64 * 1.37 - 3.0).collect::<Vec<_>>())
                    .prop_shuffle()
                    .prop_map(move |v| (v[..n].to_vec(), v[n..].to_vec()))
            })
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration((xs, ys) in distinct(10)) {
            for alt in [Alternative::TwoSided, Alternative::Greater, Alternative::Less] {
                let r = mann_whitney(&xs, &ys, alt).unwrap();
                prop_assert_eq!(r.method, Method::Exact);
                prop_assert!((r.p - enumerate_p(&xs, &ys, alt)).abs() < 1e-12);
            }
        }

        #[test]
        fn u_sums_to_nm(xs in proptest::collection::vec(-5i32..5, 1..20), ys in proptest::collection::vec(-5i32..5, 1..20)) {
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let ys: Vec<f64> = ys.into_iter().map(f64::from).collect();
            let r = mann_whitney(&xs, &ys, Alternative::TwoSided).unwrap();
            prop_assert_eq!(r.u_x + r.u_y, (xs.len() * ys.len()) as f64);
            prop_assert!((0.0..=1.0).contains(&r.p));
        }

        #[test]
        fn invariant_under_increasing_transform((xs, ys) in distinct(12)) {
            let f = |v: &f64| (v * 0.7).exp() + 2.0 * v;
            let tx: Vec<f64> = xs.iter().map(f).collect();
            let ty: Vec<f64> = ys.iter().map(f).collect();
            for alt in [Alternative::TwoSided, Alternative::Greater, Alternative::Less] {
                let a = mann_whitney(&xs, &ys, alt).unwrap();
                let b = mann_whitney(&tx, &ty, alt).unwrap();
                prop_assert_eq!(a.p, b.p);
            }
        }
    }
}
