use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{softmax, TokenPolicy, BOS, EOS};
use crate::par;
use crate::rng::{rng, stream_seed, Rng};
use crate::schema::{FeatureRecord, TextRecord, DEFAULT_CONTEXT_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    /// `0` decodes greedily.
    pub temperature: f64,
    pub top_p: f64,
    /// `0` disables top-k filtering.
    pub top_k: usize,
    pub max_tokens: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self { temperature: 1.0, top_p: 0.95, top_k: 0, max_tokens: DEFAULT_CONTEXT_LEN }
    }
}

impl DecodingConfig {
    /// Untruncated sampling from the policy, as used for rollouts.
    pub fn ancestral(max_tokens: usize) -> Self {
        Self { temperature: 1.0, top_p: 1.0, top_k: 0, max_tokens }
    }
}

/// Applies top-k then top-p filtering to a distribution and renormalizes.
/// The nucleus is the shortest probability-sorted prefix whose mass reaches
/// `top_p`, boundary token included. Ties keep the lower index first.
pub fn nucleus(probs: &[f64], top_k: usize, top_p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut keep = order.len();
    if top_k > 0 {
        keep = keep.min(top_k);
    }
    if top_p < 1.0 {
        let mut mass = 0.0;
        for (i, &idx) in order[..keep].iter().enumerate() {
            mass += probs[idx];
            if mass >= top_p - 1e-12 {
                keep = i + 1;
                break;
            }
        }
    }
    let mut out = vec![0.0; probs.len()];
    let total: f64 = order[..keep].iter().map(|&i| probs[i]).sum();
    for &i in &order[..keep] {
        out[i] = probs[i] / total;
    }
    out
}

/// Next-token distribution after temperature and filtering. BOS is never
/// emitted.
pub(crate) fn next_token_distribution(log_probs: &[f64], cfg: &DecodingConfig) -> Vec<f64> {
    let mut z: Vec<f64> = log_probs.to_vec();
    z[BOS as usize] = f64::NEG_INFINITY;
    if cfg.temperature <= 1e-8 {
        let best = (0..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b });
        let mut out = vec![0.0; z.len()];
        out[best] = 1.0;
        return out;
    }
    z.iter_mut().for_each(|v| *v /= cfg.temperature);
    let p = softmax(&z);
    if cfg.top_k == 0 && cfg.top_p >= 1.0 {
        p
    } else {
        nucleus(&p, cfg.top_k, cfg.top_p)
    }
}

pub(crate) fn categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples token ids from BOS until EOS (included) or `max_tokens`.
pub fn sample_tokens(policy: &TokenPolicy, f: &FeatureRecord, cfg: &DecodingConfig, rng: &mut Rng) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = BOS;
    while out.len() < cfg.max_tokens {
        let dist = next_token_distribution(&policy.log_probs(prev, f), cfg);
        let t = categorical(&dist, rng) as u32;
        out.push(t);
        if t == EOS {
            break;
        }
        prev = t;
    }
    out
}

pub fn sample_text(policy: &TokenPolicy, f: &FeatureRecord, cfg: &DecodingConfig, seed: u64) -> TextRecord {
    policy.vocab().decode(&sample_tokens(policy, f, cfg, &mut rng(seed)))
}

/// One sequence per feature; sequence `i` uses its own stream of `seed`.
pub fn sample_batch(policy: &TokenPolicy, features: &[FeatureRecord], cfg: &DecodingConfig, seed: u64) -> Vec<Vec<u32>> {
    par::map_range(features.len(), |i| {
        sample_tokens(policy, &features[i], cfg, &mut rng(stream_seed(seed, i as u64)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::Vocab;
    use crate::schema::Schema;

    fn policy() -> (TokenPolicy, FeatureRecord) {
        let schema = Schema::from_pairs("t", &[("a", &["x", "y"][..])]).unwrap();
        let mut p = TokenPolicy::new(Vocab::new(&["a", "b", "c"]).unwrap(), &schema);
        let v = p.vocab_size();
        for prev in 0..v {
            for (t, w) in [0.0, 0.3, 1.0, -0.4, 0.2].iter().enumerate() {
                p.params[prev * v + t] = *w;
            }
        }
        (p, FeatureRecord::new(vec![0]))
    }

    #[test]
    fn nucleus_boundary_rule() {
        let out = nucleus(&[0.5, 0.3, 0.15, 0.05], 0, 0.95);
        assert_eq!(out[3], 0.0);
        assert!((out[0] - 0.5 / 0.95).abs() < 1e-12);
        assert!((out[2] - 0.15 / 0.95).abs() < 1e-12);
        let out = nucleus(&[0.1, 0.6, 0.3], 2, 1.0);
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 2.0 / 3.0).abs() < 1e-12 && (out[2] - 1.0 / 3.0).abs() < 1e-12);
        let out = nucleus(&[0.25; 4], 0, 0.5);
        assert_eq!(out, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn greedy_is_deterministic() {
        let (p, f) = policy();
        let cfg = DecodingConfig { temperature: 0.0, max_tokens: 5, ..Default::default() };
        let a = sample_tokens(&p, &f, &cfg, &mut rng(1));
        let b = sample_tokens(&p, &f, &cfg, &mut rng(2));
        assert_eq!(a, b);
        assert_eq!(a, vec![2; 5]);
    }

    #[test]
    fn ancestral_frequencies_match_softmax() {
        let (p, f) = policy();
        let cfg = DecodingConfig { max_tokens: 1, ..DecodingConfig::ancestral(1) };
        let expected = next_token_distribution(&p.log_probs(BOS, &f), &cfg);
        let n = 100_000;
        let mut counts = vec![0usize; p.vocab_size()];
        let mut r = rng(42);
        for _ in 0..n {
            counts[sample_tokens(&p, &f, &cfg, &mut r)[0] as usize] += 1;
        }
        assert_eq!(counts[BOS as usize], 0);
        let chi2: f64 = counts
            .iter()
            .zip(&expected)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&c, &e)| (c as f64 - n as f64 * e).powi(2) / (n as f64 * e))
            .sum();
        // 3 degrees of freedom, 0.999 quantile
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn stops_at_eos_and_batches_reproduce() {
        let (p, f) = policy();
        let cfg = DecodingConfig::default();
        let toks = sample_tokens(&p, &f, &cfg, &mut rng(9));
        assert!(toks.len() <= cfg.max_tokens);
        assert!(toks[..toks.len() - 1].iter().all(|&t| t != EOS));
        let feats = vec![f.clone(); 8];
        assert_eq!(sample_batch(&p, &feats, &cfg, 4), sample_batch(&p, &feats, &cfg, 4));
    }
}
