//! Ground truth for the acceptance tests.
//!
//! Nothing here calls into the sampling engine: the reference sampler draws
//! its own exponential variates from a `rand` generator, and exact inclusion
//! probabilities are enumerated in rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;
use wrs_core::KeyedItem;

/// Largest instance the exact enumeration accepts.
pub const MAX_EXACT_ITEMS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("exact enumeration supports at most {MAX_EXACT_ITEMS} items, got {0}")]
    TooLarge(usize),
    #[error("sample size {k} out of range for {n} items")]
    BadSampleSize { k: usize, n: usize },
    #[error("weight {0} is not positive and finite")]
    BadWeight(f64),
    #[error("rank {k} out of range for {len} elements")]
    RankOutOfRange { k: usize, len: usize },
}

/// Exact per-item inclusion probabilities of a weighted sample without
/// replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionTable {
    pub probabilities: Vec<BigRational>,
}

impl InclusionTable {
    pub fn to_f64(&self) -> Vec<f64> {
        self.probabilities
            .iter()
            .map(|p| p.to_f64().unwrap())
            .collect()
    }
}

fn exact_weights(weights: &[f64], k: usize) -> Result<Vec<BigRational>, OracleError> {
    let n = weights.len();
    if n > MAX_EXACT_ITEMS {
        return Err(OracleError::TooLarge(n));
    }
    if k > n {
        return Err(OracleError::BadSampleSize { k, n });
    }
    weights
        .iter()
        .map(|&w| {
            if w > 0.0 && w.is_finite() {
                Ok(BigRational::from_float(w).unwrap())
            } else {
                Err(OracleError::BadWeight(w))
            }
        })
        .collect()
}

/// Exact probability of each `k`-subset (as a bit mask over item indices)
/// being the sample, summing `Π w_{s_j} / (W - Σ_{l<j} w_{s_l})` over every
/// draw order. Orders are merged by the set drawn so far, so the work is
/// `O(2^n · n)` rather than `O(n!)`.
pub fn exact_subset_probabilities(
    weights: &[f64],
    k: usize,
) -> Result<Vec<(u32, BigRational)>, OracleError> {
    let w = exact_weights(weights, k)?;
    let n = w.len();
    let total: BigRational = w.iter().cloned().sum();
    let mut prob = vec![BigRational::zero(); 1 << n];
    prob[0] = BigRational::one();
    let mut masks: Vec<u32> = (0..1u32 << n).collect();
    masks.sort_by_key(|m| m.count_ones());
    for &mask in &masks {
        if mask.count_ones() as usize >= k || prob[mask as usize].is_zero() {
            continue;
        }
        let drawn: BigRational = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| w[i].clone())
            .sum();
        let remaining = &total - drawn;
        let here = prob[mask as usize].clone();
        for i in (0..n).filter(|i| mask >> i & 1 == 0) {
            let next = (mask | 1 << i) as usize;
            prob[next] += &here * &w[i] / &remaining;
        }
    }
    Ok(masks
        .into_iter()
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (m, prob[m as usize].clone()))
        .collect())
}

/// Exact inclusion probability of every item for sample size `k`.
pub fn exact_inclusion(weights: &[f64], k: usize) -> Result<InclusionTable, OracleError> {
    let subsets = exact_subset_probabilities(weights, k)?;
    let mut probabilities = vec![BigRational::zero(); weights.len()];
    for (mask, p) in subsets {
        for (i, slot) in probabilities.iter_mut().enumerate() {
            if mask >> i & 1 == 1 {
                *slot += &p;
            }
        }
    }
    Ok(InclusionTable { probabilities })
}

/// One-shot weighted sample without replacement: key every item with
/// `-ln(u)/w` and keep the `k` smallest. Returns item indices.
pub fn reference_sample<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], k: usize) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            // random::<f64>() is in [0, 1); 1 - u is in (0, 1].
            let u = 1.0 - rng.random::<f64>();
            (-u.ln() / w, i)
        })
        .collect();
    let k = k.min(keyed.len());
    if k == 0 {
        return Vec::new();
    }
    keyed.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    keyed.truncate(k);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// The `k`-th smallest (1-based) element of the union of `seqs`, found by
/// concatenating and sorting.
pub fn kth_of_merged(seqs: &[Vec<KeyedItem>], k: usize) -> Result<KeyedItem, OracleError> {
    let mut all: Vec<KeyedItem> = seqs.iter().flatten().copied().collect();
    if k == 0 || k > all.len() {
        return Err(OracleError::RankOutOfRange { k, len: all.len() });
    }
    all.sort();
    Ok(all[k - 1])
}

/// Number of elements `<= probe` in the union of `seqs`.
pub fn merged_rank(seqs: &[Vec<KeyedItem>], probe: &KeyedItem) -> usize {
    seqs.iter().flatten().filter(|x| *x <= probe).count()
}

fn chi_squared_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).unwrap().sf(stat)
}

/// Pearson goodness-of-fit p-value for counts of a multinomial experiment.
/// `expected` must sum to one.
pub fn chi_squared_gof(observed: &[u64], expected: &[f64], trials: u64) -> f64 {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &p)| {
            let e = p * trials as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    chi_squared_sf(stat, observed.len() - 1)
}

/// Two-sample homogeneity p-value for count vectors over the same cells.
/// Cells with fewer than `min_cell` combined counts are pooled into one.
pub fn chi_squared_homogeneity(a: &[u64], b: &[u64], min_cell: u64) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        if x + y >= min_cell {
            cells.push((x as f64, y as f64));
        } else {
            pooled.0 += x;
            pooled.1 += y;
        }
    }
    if pooled.0 + pooled.1 > 0 {
        cells.push((pooled.0 as f64, pooled.1 as f64));
    }
    let na: f64 = cells.iter().map(|c| c.0).sum();
    let nb: f64 = cells.iter().map(|c| c.1).sum();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    let (ra, rb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let stat: f64 = cells
        .iter()
        .map(|&(x, y)| (x * ra - y * rb).powi(2) / (x + y))
        .sum();
    chi_squared_sf(stat, cells.len() - 1)
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Standard score of `successes` out of `trials` Bernoulli(`p`) draws.
pub fn binomial_z(successes: u64, trials: u64, p: f64) -> f64 {
    let n = trials as f64;
    (successes as f64 - n * p) / (n * p * (1.0 - p)).sqrt()
}

/// `num / den` as an exact rational.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn inclusion_of_one_one_two() {
        let t = exact_inclusion(&[1.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(
            t.probabilities,
            vec![ratio(7, 12), ratio(7, 12), ratio(5, 6)]
        );
    }

    #[test]
    fn equal_weights_are_symmetric() {
        for n in 1..=8 {
            for k in 0..=n {
                let t = exact_inclusion(&vec![3.0; n], k).unwrap();
                assert!(t
                    .probabilities
                    .iter()
                    .all(|p| *p == ratio(k as i64, n as i64)));
            }
        }
    }

    #[test]
    fn tables_sum_to_k_and_permute() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.random_range(2..=9);
            let k = rng.random_range(1..=n);
            let w: Vec<f64> = (0..n)
                .map(|_| rng.random_range(1..50) as f64 / 4.0)
                .collect();
            let t = exact_inclusion(&w, k).unwrap();
            let sum: BigRational = t.probabilities.iter().cloned().sum();
            assert_eq!(sum, ratio(k as i64, 1));
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(1);
            let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let pt = exact_inclusion(&pw, k).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                assert_eq!(pt.probabilities[j], t.probabilities[i]);
            }
        }
    }

    #[test]
    fn exact_errors() {
        assert_eq!(
            exact_inclusion(&[1.0; 13], 2),
            Err(OracleError::TooLarge(13))
        );
        assert!(matches!(
            exact_inclusion(&[1.0; 3], 4),
            Err(OracleError::BadSampleSize { .. })
        ));
        assert!(matches!(
            exact_inclusion(&[1.0, 0.0], 1),
            Err(OracleError::BadWeight(_))
        ));
    }

    #[test]
    fn reference_sample_matches_exact() {
        let mut rng = StdRng::seed_from_u64(2);
        let w = [1.0, 1.0, 2.0];
        assert_eq!(reference_sample(&mut rng, &w, 3).len(), 3);
        let trials = 200_000u64;
        let mut counts = [0u64; 3];
        for _ in 0..trials {
            for i in reference_sample(&mut rng, &w, 2) {
                counts[i] += 1;
            }
        }
        let exact = exact_inclusion(&w, 2).unwrap().to_f64();
        for i in 0..3 {
            let z = binomial_z(counts[i], trials, exact[i]);
            assert!(z.abs() < 3.0, "item {i}: z = {z}");
        }
    }

    #[test]
    fn reference_sample_uniform_over_subsets() {
        let mut rng = StdRng::seed_from_u64(3);
        let trials = 60_000u64;
        let mut counts = [0u64; 16];
        for _ in 0..trials {
            let mask: usize = reference_sample(&mut rng, &[5.0; 4], 2)
                .iter()
                .map(|i| 1 << i)
                .sum();
            counts[mask] += 1;
        }
        let observed: Vec<u64> = (0..16)
            .filter(|m: &usize| m.count_ones() == 2)
            .map(|m| counts[m])
            .collect();
        assert!(chi_squared_gof(&observed, &[1.0 / 6.0; 6], trials) > 0.001);
    }

    #[test]
    fn merged_selection() {
        let a = vec![
            KeyedItem::new(1.0, 0, 0),
            KeyedItem::new(4.0, 0, 1),
            KeyedItem::new(7.0, 0, 2),
        ];
        let b = vec![
            KeyedItem::new(2.0, 1, 0),
            KeyedItem::new(5.0, 1, 1),
            KeyedItem::new(8.0, 1, 2),
        ];
        let seqs = [a, b];
        assert_eq!(kth_of_merged(&seqs, 3).unwrap().key, 4.0);
        assert_eq!(kth_of_merged(&seqs, 1).unwrap().key, 1.0);
        assert!(kth_of_merged(&seqs, 7).is_err());
        assert!(kth_of_merged(&seqs, 0).is_err());
        assert_eq!(merged_rank(&seqs, &KeyedItem::new(5.0, 1, 1)), 4);
    }

    #[test]
    fn chi_squared_detects_mismatch() {
        assert!((chi_squared_gof(&[100, 200, 700], &[0.1, 0.2, 0.7], 1_000) - 1.0).abs() < 1e-12);
        assert!(chi_squared_gof(&[200, 200, 600], &[0.1, 0.2, 0.7], 1_000) < 1e-6);
        assert!((chi_squared_homogeneity(&[10, 20, 30], &[10, 20, 30], 5) - 1.0).abs() < 1e-12);
        assert!(chi_squared_homogeneity(&[100, 200, 300], &[300, 200, 100], 5) < 1e-6);
    }

    #[test]
    fn ks_of_uniform_samples_is_small() {
        let mut rng = StdRng::seed_from_u64(4);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_statistic(&xs, |x| x.clamp(0.0, 1.0)) < 0.01);
        assert!(ks_statistic(&xs, |x| (x * x).clamp(0.0, 1.0)) > 0.2);
    }
}
