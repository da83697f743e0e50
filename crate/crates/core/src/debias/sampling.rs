use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability mass over training indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Masses", into = "Masses")]
pub struct SamplingDistribution {
    probs: Vec<f64>,
    cdf: Vec<f64>,
    uniform: bool,
}

#[derive(Serialize, Deserialize)]
struct Masses {
    probs: Vec<f64>,
}

impl From<Masses> for SamplingDistribution {
    fn from(m: Masses) -> Self {
        Self::from_probs_unchecked(m.probs)
    }
}

impl From<SamplingDistribution> for Masses {
    fn from(d: SamplingDistribution) -> Self {
        Masses { probs: d.probs }
    }
}

impl SamplingDistribution {
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "empty distribution");
        let p = 1.0 / n as f64;
        Self::from_probs_unchecked(vec![p; n])
    }

    fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        let uniform = probs.iter().all(|&p| p == probs[0]);
        Self { probs, cdf, uniform }
    }

    /// `h_i = score_i / sum(scores)`.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Degenerate("no samples to weight".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Degenerate(format!(
                "score {bad} is not a finite non-negative value"
            )));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("all scores are zero".into()));
        }
        Ok(Self::from_probs_unchecked(scores.iter().map(|s| s / total).collect()))
    }

    /// Like [`from_scores`](Self::from_scores) but falls back to uniform when every score is zero.
    pub fn from_scores_or_uniform(scores: &[f64]) -> Result<Self> {
        if !scores.is_empty() && scores.iter().all(|&s| s == 0.0) {
            return Ok(Self::uniform(scores.len()));
        }
        Self::from_scores(scores)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// All masses bit-identical.
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Draws one index by inverse-CDF lookup (or directly when uniform).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        if self.uniform {
            return rng.random_range(0..self.probs.len());
        }
        let total = *self.cdf.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }
}

pub fn sampling_distribution(norms: &[f64]) -> Result<SamplingDistribution> {
    SamplingDistribution::from_scores(norms)
}

/// Loss weights `n * h_i`; their mean is one.
pub fn reweight_weights(norms: &[f64], n: usize) -> Result<Vec<f64>> {
    let h = SamplingDistribution::from_scores(norms)?;
    Ok(h.probs().iter().map(|p| p * n as f64).collect())
}

/// `batch_size` i.i.d. draws with replacement.
pub fn draw_batch<R: Rng>(dist: &SamplingDistribution, batch_size: usize, rng: &mut R) -> Vec<usize> {
    (0..batch_size).map(|_| dist.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_distribution() {
        let h = sampling_distribution(&[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(h.probs(), &[0.25, 0.25, 0.5]);
        assert!(!h.is_uniform());
        let u = sampling_distribution(&[3.0; 4]).unwrap();
        assert!(u.is_uniform());
        assert_eq!(u.probs(), &[0.25; 4]);
    }

    #[test]
    fn zero_norms_are_degenerate_unless_opted_in() {
        assert!(matches!(sampling_distribution(&[0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(SamplingDistribution::from_scores_or_uniform(&[0.0, 0.0])
            .unwrap()
            .is_uniform());
        assert!(sampling_distribution(&[1.0, -1.0]).is_err());
        assert!(sampling_distribution(&[]).is_err());
    }

    #[test]
    fn reweight_reference() {
        assert_eq!(reweight_weights(&[1.0, 3.0], 2).unwrap(), vec![0.5, 1.5]);
        assert_eq!(reweight_weights(&[2.0; 5], 5).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn point_mass_draws_one_index() {
        let h = sampling_distribution(&[0.0, 0.0, 0.0, 5.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(draw_batch(&h, 64, &mut rng).iter().all(|&i| i == 3));
    }

    #[test]
    fn draws_are_deterministic() {
        let h = sampling_distribution(&[1.0, 2.0, 3.0]).unwrap();
        let a = draw_batch(&h, 50, &mut ChaCha8Rng::seed_from_u64(9));
        let b = draw_batch(&h, 50, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_frequencies_within_five_sigma() {
        let n = 20;
        let draws = 200_000;
        let h = SamplingDistribution::uniform(n);
        let mut counts = vec![0usize; n];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in draw_batch(&h, draws, &mut rng) {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn weighted_frequencies_pass_chi_square() {
        let scores = [1.0, 2.0, 3.0, 4.0, 0.5, 7.5];
        let h = sampling_distribution(&scores).unwrap();
        let draws = 60_000;
        let mut counts = [0usize; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in draw_batch(&h, draws, &mut rng) {
            counts[i] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(h.probs())
            .map(|(&o, &p)| {
                let e = p * draws as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // 5 degrees of freedom, 0.999 quantile.
        assert!(chi2 < 20.515, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn normalized_and_scale_invariant(
            scores in prop::collection::vec(0.0f64..100.0, 1..200),
            k in 1e-3f64..1e3,
        ) {
            prop_assume!(scores.iter().any(|&s| s > 0.0));
            let h = sampling_distribution(&scores).unwrap();
            prop_assert!((h.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(h.probs().iter().all(|&p| p >= 0.0));
            let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
            let hk = sampling_distribution(&scaled).unwrap();
            for (a, b) in h.probs().iter().zip(hk.probs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let w = reweight_weights(&scores, scores.len()).unwrap();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
        }
    }
}
