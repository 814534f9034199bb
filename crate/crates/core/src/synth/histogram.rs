use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureSampler, SynthError, MAX_DOMAIN};
use crate::par;
use crate::rng::{rng, stream_seed};
use crate::schema::{FeatureRecord, Schema};

const SAMPLE_SHARD: usize = 4096;

/// Noisy, thresholded and normalized counts over one categorical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpHistogram {
    pub counts: Vec<f64>,
    pub probs: Vec<f64>,
    pub sigma: f64,
    pub threshold: f64,
}

/// Adds `N(0, sigma²)` to each bin count, zeroes bins at or below
/// `threshold` and normalizes the rest.
pub fn dp_histogram_fit(
    values: &[usize],
    bins: usize,
    sigma: f64,
    threshold: f64,
    seed: u64,
) -> Result<DpHistogram, SynthError> {
    let mut counts = vec![0.0; bins];
    for &v in values {
        counts[v] += 1.0;
    }
    let mut r = rng(seed);
    if sigma > 0.0 {
        for c in counts.iter_mut() {
            let z: f64 = r.sample(StandardNormal);
            *c += sigma * z;
        }
    }
    for c in counts.iter_mut() {
        if *c <= threshold {
            *c = 0.0;
        }
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(SynthError::NoiseDominated);
    }
    let probs = counts.iter().map(|c| c / total).collect();
    Ok(DpHistogram { counts, probs, sigma, threshold })
}

/// Categorical draws over surviving bins.
pub fn histogram_sample(hist: &DpHistogram, n: usize, seed: u64) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(hist.probs.len());
    let mut acc = 0.0;
    for p in &hist.probs {
        acc += p;
        cdf.push(acc);
    }
    let last = hist.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let shards = n.div_ceil(SAMPLE_SHARD);
    par::map_range(shards, |s| {
        let mut r = rng(stream_seed(seed, s as u64));
        let len = SAMPLE_SHARD.min(n - s * SAMPLE_SHARD);
        (0..len)
            .map(|_| cdf.partition_point(|&c| c <= r.random::<f64>() * acc).min(last))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// DP histogram over the flattened joint feature domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    pub schema_hash: String,
    pub cardinalities: Vec<usize>,
    pub histogram: DpHistogram,
}

pub fn fit_feature_histogram(
    features: &[FeatureRecord],
    schema: &Schema,
    sigma: f64,
    threshold: f64,
    seed: u64,
) -> Result<FeatureHistogram, SynthError> {
    let domain = schema.cardinalities().iter().try_fold(1usize, |a, &c| a.checked_mul(c)).unwrap_or(usize::MAX);
    if domain > MAX_DOMAIN {
        return Err(SynthError::DomainTooLarge(domain));
    }
    let values: Vec<usize> = features.iter().map(|f| schema.joint_index(f)).collect();
    Ok(FeatureHistogram {
        schema_hash: schema.hash(),
        cardinalities: schema.cardinalities(),
        histogram: dp_histogram_fit(&values, domain, sigma, threshold, seed)?,
    })
}

impl FeatureHistogram {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), SynthError> {
        let json = serde_json::to_string(self).map_err(|e| SynthError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SynthError> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| SynthError::Format(e.to_string()))
    }

    fn decode(&self, mut index: usize) -> FeatureRecord {
        let mut values = vec![0; self.cardinalities.len()];
        for k in (0..values.len()).rev() {
            values[k] = index % self.cardinalities[k];
            index /= self.cardinalities[k];
        }
        FeatureRecord::new(values)
    }
}

impl FeatureSampler for FeatureHistogram {
    fn sample(&self, n: usize, seed: u64) -> Vec<FeatureRecord> {
        histogram_sample(&self.histogram, n, seed).into_iter().map(|i| self.decode(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::js_distance;

    #[test]
    fn noiseless_histogram_is_exact() {
        let h = dp_histogram_fit(&[0, 0, 1, 2, 2, 2], 4, 0.0, 0.0, 1).unwrap();
        assert_eq!(h.probs, vec![2.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0, 0.0]);
        let draws = histogram_sample(&h, 1000, 3);
        assert!(draws.iter().all(|&d| d < 3));
    }

    #[test]
    fn pinned_two_bin_draw() {
        let values = vec![0; 1000];
        let h = dp_histogram_fit(&values, 2, 10.0, 0.0, 2024).unwrap();
        assert!(h.counts[0] > 950.0);
        // the seeded noise draw for bin 1 is positive, so the bin survives
        assert!(h.counts[1] > 0.0 && h.counts[1] < 40.0, "{:?}", h.counts);
    }

    #[test]
    fn all_bins_zeroed_is_an_error() {
        let r = dp_histogram_fit(&[], 3, 0.0, 0.0, 0);
        assert!(matches!(r, Err(SynthError::NoiseDominated)));
    }

    #[test]
    fn sparse_regime_diverges() {
        let bins = 1827;
        let mut r = rng(5);
        let values: Vec<usize> = (0..50).map(|_| r.random_range(0..40)).collect();
        let mut truth = vec![0.0; bins];
        values.iter().for_each(|&v| truth[v] += 1.0 / 50.0);
        let h = dp_histogram_fit(&values, bins, 10.0, 0.0, 6).unwrap();
        assert!(js_distance(&truth, &h.probs).unwrap() > 0.3);
    }
}
