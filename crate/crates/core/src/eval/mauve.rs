//! Divergence-frontier score between two text corpora.
//!
//! Both corpora are embedded and clustered jointly; each corpus becomes a
//! smoothed histogram over clusters, `P` for `texts_a` and `Q` for `texts_b`.
//! For mixtures `M_λ = λP + (1 − λ)Q`, λ ∈ {0.01, …, 0.99}, the frontier
//! points are `(exp(−c·KL(Q‖M_λ)), exp(−c·KL(P‖M_λ)))`, closed with the
//! endpoints `(1, 0)` and `(0, 1)`. The score is the trapezoid area under it.

use serde::{Deserialize, Serialize};

use super::{kmeans, Embedder, EvalError};
use crate::par;

/// Additive smoothing applied to every cluster histogram bin.
pub const HISTOGRAM_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MauveConfig {
    /// Number of clusters; `None` uses one tenth of `texts_b`.
    pub clusters: Option<usize>,
    /// Frontier scaling constant `c`.
    pub scaling: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for MauveConfig {
    fn default() -> Self {
        Self { clusters: None, scaling: 5.0, max_iter: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MauveResult {
    pub score: f64,
    pub clusters: usize,
    pub frontier: Vec<(f64, f64)>,
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

fn histogram(labels: &[usize], k: usize) -> Vec<f64> {
    let mut h = vec![HISTOGRAM_SMOOTHING; k];
    for &l in labels {
        h[l] += 1.0;
    }
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= s);
    h
}

/// Frontier points and area for two cluster histograms.
pub(crate) fn frontier_area(p: &[f64], q: &[f64], scaling: f64) -> (f64, Vec<(f64, f64)>) {
    let mut pts = vec![(1.0, 0.0)];
    for i in 1..=99 {
        let lambda = i as f64 / 100.0;
        let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        pts.push(((-scaling * kl(q, &m)).exp(), (-scaling * kl(p, &m)).exp()));
    }
    pts.push((0.0, 1.0));
    let mut sorted = pts.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let area: f64 = sorted.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum();
    (area.clamp(0.0, 1.0), pts)
}

/// MAUVE-style score between `texts_a` (reference) and `texts_b` (candidate), in `[0, 1]`.
pub fn mauve_lite<E: Embedder>(
    texts_a: &[String],
    texts_b: &[String],
    embedder: &E,
    config: &MauveConfig,
) -> Result<MauveResult, EvalError> {
    if texts_a.is_empty() || texts_b.is_empty() {
        return Err(EvalError::Empty("corpus"));
    }
    let k = config.clusters.unwrap_or(texts_b.len() / 10).max(1);
    for size in [texts_a.len(), texts_b.len()] {
        if size < k {
            return Err(EvalError::TooFewTexts { size, k });
        }
    }
    // Cluster the union in a canonical order so swapping corpora yields the same clustering.
    let union: Vec<&String> = texts_a.iter().chain(texts_b).collect();
    let mut order: Vec<usize> = (0..union.len()).collect();
    order.sort_by(|&i, &j| union[i].cmp(union[j]).then(i.cmp(&j)));
    let ordered: Vec<&String> = order.iter().map(|&i| union[i]).collect();
    let emb = par::map(&ordered, |t| embedder.embed(t));
    let result = kmeans(&emb, k, config.max_iter, config.seed);
    let mut labels = vec![0; union.len()];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = result.assignments[pos];
    }
    let p = histogram(&labels[..texts_a.len()], k);
    let q = histogram(&labels[texts_a.len()..], k);
    let (score, frontier) = frontier_area(&p, &q, config.scaling);
    Ok(MauveResult { score, clusters: k, frontier })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::HashedBow;

    #[test]
    fn identical_histograms_score_one() {
        let p = vec![0.2, 0.3, 0.5];
        let (a, _) = frontier_area(&p, &p, 5.0);
        assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_histograms_match_closed_form() {
        // Disjoint supports give the curve y = (1 − x^{1/c})^c with area c·B(c, c+1) = 1/252 at c = 5.
        let p = vec![1.0, 0.0];
        let q = vec![0.0, 1.0];
        let (a, _) = frontier_area(&p, &q, 5.0);
        assert!((a - 0.003_968_253_968).abs() < 2e-3, "{a}");
    }

    #[test]
    fn too_few_texts() {
        let a: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
        let cfg = MauveConfig { clusters: Some(10), ..Default::default() };
        assert!(matches!(mauve_lite(&a, &a, &HashedBow::default(), &cfg), Err(EvalError::TooFewTexts { .. })));
    }

    #[test]
    fn swap_symmetry() {
        let a: Vec<String> = (0..60).map(|i| format!("alpha beta w{} w{}", i % 7, i % 3)).collect();
        let b: Vec<String> = (0..60).map(|i| format!("alpha gamma w{} v{}", i % 5, i % 4)).collect();
        let cfg = MauveConfig { clusters: Some(6), ..Default::default() };
        let ab = mauve_lite(&a, &b, &HashedBow::default(), &cfg).unwrap().score;
        let ba = mauve_lite(&b, &a, &HashedBow::default(), &cfg).unwrap().score;
        assert!((ab - ba).abs() < 1e-9, "{ab} {ba}");
    }
}
