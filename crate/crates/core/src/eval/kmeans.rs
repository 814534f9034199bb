//! Seeded k-means with k-means++ initialisation.
//!
//! Points are stored sparsely (embeddings of short texts are mostly zeros)
//! and centroids densely. Assignment runs data-parallel; centroid updates
//! accumulate points in index order, so results do not depend on threading.

use rand::Rng as _;

use crate::par;
use crate::rng::rng;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

struct Sparse {
    idx: Vec<u32>,
    val: Vec<f64>,
    norm2: f64,
}

impl Sparse {
    fn new(x: &[f64]) -> Self {
        let (mut idx, mut val) = (Vec::new(), Vec::new());
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                idx.push(i as u32);
                val.push(v);
            }
        }
        let norm2 = val.iter().map(|v| v * v).sum();
        Self { idx, val, norm2 }
    }

    fn dist2(&self, c: &[f64], c_norm2: f64) -> f64 {
        let dot: f64 = self.idx.iter().zip(&self.val).map(|(&i, &v)| v * c[i as usize]).sum();
        (self.norm2 + c_norm2 - 2.0 * dot).max(0.0)
    }
}

fn norm2(c: &[f64]) -> f64 {
    c.iter().map(|x| x * x).sum()
}

fn nearest(p: &Sparse, centroids: &[Vec<f64>], norms: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, (c, &n)) in centroids.iter().zip(norms).enumerate() {
        let d = p.dist2(c, n);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Clusters `points` into `k` groups; at most `max_iter` Lloyd iterations,
/// stopping early once assignments no longer change.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= number of points");
    let dim = points[0].len();
    let sparse: Vec<Sparse> = par::map(points, |p| Sparse::new(p));
    let mut rng = rng(seed);

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut d2: Vec<f64> = {
        let c = &centroids[0];
        let n = norm2(c);
        par::map(&sparse, |p| p.dist2(c, n))
    };
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next].clone();
        let n = norm2(&c);
        let upd = par::map(&sparse, |p| p.dist2(&c, n));
        for (a, b) in d2.iter_mut().zip(upd) {
            if b < *a {
                *a = b;
            }
        }
        centroids.push(c);
    }

    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let norms: Vec<f64> = centroids.iter().map(|c| norm2(c)).collect();
        let next: Vec<usize> = par::map(&sparse, |p| nearest(p, &centroids, &norms).0);
        let changed = next != assignments;
        assignments = next;
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in sparse.iter().zip(&assignments) {
            counts[a] += 1;
            for (&i, &v) in p.idx.iter().zip(&p.val) {
                sums[a][i as usize] += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
    }
    KMeansResult { assignments, centroids, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_obvious_clusters() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let e = i as f64 * 1e-3;
            pts.push(vec![1.0 + e, 0.0, 0.0]);
            pts.push(vec![0.0, 1.0 + e, 0.0]);
            pts.push(vec![0.0, 0.0, 1.0 + e]);
        }
        let r = kmeans(&pts, 3, 100, 5);
        for g in 0..3 {
            let first = r.assignments[g];
            assert!((0..20).all(|i| r.assignments[3 * i + g] == first));
        }
        let mut labels: Vec<_> = r.assignments[..3].to_vec();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 3);
    }

    #[test]
    fn deterministic_given_seed() {
        let pts: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let a = kmeans(&pts, 7, 100, 1);
        let b = kmeans(&pts, 7, 100, 1);
        assert_eq!(a.assignments, b.assignments);
    }
}
