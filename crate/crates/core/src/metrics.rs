//! Ensemble statistics: interquartile ranges, threshold crossing times and
//! block-averaged learning curves.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IQRSummary {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Quantile by linear interpolation between order statistics at position
/// `(n - 1) p` ("type 7"). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn iqr(values: &[f64]) -> IQRSummary {
    assert!(!values.is_empty(), "iqr of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    IQRSummary {
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
    }
}

/// First time at which the series drops to `threshold` or below.
pub fn time_to_threshold(series: &[(f64, f64)], threshold: f64) -> Option<f64> {
    series.iter().find(|(_, n)| *n <= threshold).map(|(t, _)| *t)
}

/// Means of consecutive full blocks of `block` returns; a trailing partial
/// block is dropped.
pub fn block_mean_rewards(returns: &[f64], block: usize) -> Vec<f64> {
    assert!(block >= 1, "block size must be positive");
    returns
        .chunks_exact(block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect()
}

/// Per-episode training record. Losses are NaN for episodes without
/// gradient updates and stored as JSON `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub returns: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub q_loss: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub pi_loss: Vec<f64>,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

impl LearningCurve {
    pub fn push(&mut self, ret: f64, q_loss: f64, pi_loss: f64) {
        self.returns.push(ret);
        self.q_loss.push(q_loss);
        self.pi_loss.push(pi_loss);
    }

    pub fn episodes(&self) -> usize {
        self.returns.len()
    }

    /// Mean return per 100-episode block.
    pub fn r_tilde(&self) -> Vec<f64> {
        block_mean_rewards(&self.returns, 100)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn iqr_examples() {
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), IQRSummary { q25: 2.0, median: 3.0, q75: 4.0 });
        assert_eq!(iqr(&[5.0]), IQRSummary { q25: 5.0, median: 5.0, q75: 5.0 });
        // h = 3 * 0.25 = 0.75 -> 1 + 0.75
        assert_eq!(iqr(&[4.0, 1.0, 3.0, 2.0]).q25, 1.75);
    }

    #[test]
    #[should_panic]
    fn iqr_empty_panics() {
        iqr(&[]);
    }

    #[test]
    fn normal_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = iqr(&xs);
        assert!(s.median.abs() < 0.04, "median {}", s.median);
        assert!((s.q25 + 0.6745).abs() < 0.05, "q25 {}", s.q25);
        assert!((s.q75 - 0.6745).abs() < 0.05, "q75 {}", s.q75);
    }

    #[test]
    fn threshold_examples() {
        let series = [(0.0, 100.0), (1.1, 40.0), (2.3, 9.0), (3.0, 2.0)];
        assert_eq!(time_to_threshold(&series, 10.0), Some(2.3));
        assert_eq!(time_to_threshold(&[(0.0, 50.0), (1.0, 20.0)], 10.0), None);
        assert_eq!(time_to_threshold(&[(0.5, 1.0), (1.0, 20.0)], 10.0), Some(0.5));
    }

    #[test]
    fn block_examples() {
        assert_eq!(block_mean_rewards(&vec![1.0; 250], 100).len(), 2);
        assert!(block_mean_rewards(&[0.3; 300], 100).iter().all(|r| (r - 0.3).abs() < 1e-15));
        let mut r = vec![0.0; 100];
        r.extend(vec![1.0; 100]);
        assert_eq!(block_mean_rewards(&r, 100), vec![0.0, 1.0]);
        let curve = LearningCurve { returns: r, ..Default::default() };
        assert_eq!(curve.r_tilde(), vec![0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn iqr_permutation_and_shift(mut xs in proptest::collection::vec(-1e3f64..1e3, 1..50), c in -10.0f64..10.0, seed in 0u64..100) {
            let a = iqr(&xs);
            prop_assert!(a.q25 <= a.median && a.median <= a.q75);
            // permutation by a seeded shuffle
            use rand::seq::SliceRandom;
            xs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(iqr(&xs), a);
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = iqr(&shifted);
            prop_assert!((b.median - a.median - c).abs() < 1e-9);
            prop_assert!((b.q25 - a.q25 - c).abs() < 1e-9);
        }

        #[test]
        fn threshold_monotone(ns in proptest::collection::vec(0.0f64..100.0, 1..40), lo in 0.0f64..50.0, extra in 0.0f64..50.0) {
            let series: Vec<(f64, f64)> = ns.iter().enumerate().map(|(i, n)| (i as f64 * 0.1, *n)).collect();
            let low = time_to_threshold(&series, lo);
            let high = time_to_threshold(&series, lo + extra);
            if let Some(t) = low {
                prop_assert!(high.unwrap() <= t);
            }
        }
    }
}
