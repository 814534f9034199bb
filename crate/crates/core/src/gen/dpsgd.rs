use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GenError, TokenPolicy};
use crate::accountant::{MechanismSpec, PrivacySpend};
use crate::par;
use crate::rng::{derive_seed, rng, Rng};
use crate::schema::FeatureRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    /// Per-example L2 clipping norm; may be infinite when `sigma` is 0.
    #[serde(with = "crate::json_float")]
    pub clip: f64,
    /// Noise multiplier; 0 trains without privacy.
    pub sigma: f64,
    /// Poisson sampling rate.
    pub q: f64,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DpSgdConfig {
    fn default() -> Self {
        Self { clip: 1.0, sigma: 1.0, q: 0.05, steps: 100, lr: 1.0, seed: 0 }
    }
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.into()));
        if !(self.clip > 0.0) {
            return bad("clip norm must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("noise multiplier must be finite and non-negative");
        }
        if self.sigma > 0.0 && self.clip.is_infinite() {
            return bad("noise needs a finite clip norm");
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad("sampling rate must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    pub fn mechanism(&self) -> MechanismSpec {
        if self.sigma == 0.0 {
            MechanismSpec::non_private().labelled("dp-sgd")
        } else {
            MechanismSpec::subsampled_gaussian(self.sigma, self.q, self.steps).labelled("dp-sgd")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub batch_size: usize,
    pub mean_raw_norm: f64,
    pub max_clipped_norm: f64,
}

pub fn clip_scale(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

/// Indices included by independent Bernoulli(q) draws.
pub fn poisson_batch(n: usize, q: f64, rng: &mut Rng) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

type Example<'a> = (&'a FeatureRecord, &'a [u32]);

/// Clipped, summed per-example log-likelihood gradients.
fn clipped_sum(policy: &TokenPolicy, batch: &[Example], clip: f64) -> Result<(Vec<f64>, StepStats), GenError> {
    let grads = par::map(batch, |(f, t)| policy.grad(f, t));
    let mut sum = vec![0.0; policy.num_params()];
    let mut stats = StepStats { batch_size: batch.len(), ..Default::default() };
    for g in grads {
        let g = g?;
        let norm = g.norm();
        let s = clip_scale(norm, clip);
        let clipped = norm * s;
        assert!(clipped <= clip * (1.0 + 1e-12), "clipped norm {clipped} exceeds {clip}");
        stats.mean_raw_norm += norm;
        stats.max_clipped_norm = stats.max_clipped_norm.max(clipped);
        g.add_into(&mut sum, s);
    }
    if !batch.is_empty() {
        stats.mean_raw_norm /= batch.len() as f64;
    }
    Ok((sum, stats))
}

/// One DP-SGD ascent step on the log-likelihood: clip each example's
/// gradient to `clip`, sum, add `N(0, sigma² clip²)` per coordinate, divide by
/// the expected batch size and apply. An empty batch yields a noise-only
/// step. Accounting is left to the caller.
pub fn dp_sgd_step(
    policy: &mut TokenPolicy,
    batch: &[Example],
    cfg: &DpSgdConfig,
    expected_batch: f64,
    rng: &mut Rng,
) -> Result<StepStats, GenError> {
    let (mut sum, stats) = clipped_sum(policy, batch, cfg.clip)?;
    if cfg.sigma > 0.0 {
        let std = cfg.sigma * cfg.clip;
        for s in sum.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *s += std * z;
        }
    }
    for (p, s) in policy.params.iter_mut().zip(&sum) {
        *p += cfg.lr * (s / expected_batch);
    }
    Ok(stats)
}

/// Plain minibatch ascent step with the same normalization as DP-SGD.
pub fn sgd_step(policy: &mut TokenPolicy, batch: &[Example], lr: f64, denom: f64) -> Result<(), GenError> {
    let (sum, _) = clipped_sum(policy, batch, f64::INFINITY)?;
    for (p, s) in policy.params.iter_mut().zip(&sum) {
        *p += lr * (s / denom);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub policy: TokenPolicy,
    pub mechanism: MechanismSpec,
    pub spend: PrivacySpend,
}

/// Runs `cfg.steps` DP-SGD steps over Poisson batches of `data`. The
/// callback sees the policy after every step.
pub fn train_dpft<F>(
    mut policy: TokenPolicy,
    data: &[(FeatureRecord, Vec<u32>)],
    cfg: &DpSgdConfig,
    delta: f64,
    mut on_step: F,
) -> Result<TrainedPolicy, GenError>
where
    F: FnMut(u64, &TokenPolicy, &StepStats),
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(GenError::NoData);
    }
    let mechanism = cfg.mechanism();
    let mut spend = PrivacySpend::new(delta)?;
    spend.charge(mechanism.clone())?;
    let mut batch_rng = rng(derive_seed(cfg.seed, "dpsgd/batches"));
    let mut noise_rng = rng(derive_seed(cfg.seed, "dpsgd/noise"));
    let expected = cfg.q * data.len() as f64;
    for step in 0..cfg.steps {
        let idx = poisson_batch(data.len(), cfg.q, &mut batch_rng);
        let batch: Vec<Example> = idx.iter().map(|&i| (&data[i].0, data[i].1.as_slice())).collect();
        let stats = dp_sgd_step(&mut policy, &batch, cfg, expected, &mut noise_rng)?;
        on_step(step, &policy, &stats);
    }
    Ok(TrainedPolicy { policy, mechanism, spend })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::{compose, rdp_to_dp};
    use crate::gen::{Vocab, EOS};
    use crate::schema::Schema;

    fn setup() -> (TokenPolicy, Vec<(FeatureRecord, Vec<u32>)>) {
        let schema = Schema::from_pairs("t", &[("a", &["x", "y"][..])]).unwrap();
        let p = TokenPolicy::new(Vocab::new(&["a", "b", "c"]).unwrap(), &schema);
        let mut r = rng(1);
        let data = (0..40)
            .map(|i| {
                let f = FeatureRecord::new(vec![i % 2]);
                let mut t: Vec<u32> = (0..r.random_range(1..6)).map(|_| 2 + (i % 2) as u32 + r.random_range(0..2)).collect();
                t.push(EOS);
                (f, t)
            })
            .collect();
        (p, data)
    }

    #[test]
    fn single_example_is_scaled_to_clip() {
        let (p, data) = setup();
        let (f, t) = (&data[0].0, data[0].1.as_slice());
        let g = p.grad(f, t).unwrap();
        let norm = g.norm();
        assert!(norm > 1.0);
        let mut q = p.clone();
        let cfg = DpSgdConfig { clip: 1.0, sigma: 0.0, lr: 1.0, ..Default::default() };
        dp_sgd_step(&mut q, &[(f, t)], &cfg, 1.0, &mut rng(0)).unwrap();
        let expected = g.to_dense(p.num_params());
        for (a, e) in q.params.iter().zip(&expected) {
            assert!((a - e / norm).abs() < 1e-15);
        }
    }

    #[test]
    fn noiseless_unclipped_step_equals_sgd() {
        let (p, data) = setup();
        let batch: Vec<Example> = data.iter().take(10).map(|(f, t)| (f, t.as_slice())).collect();
        let cfg = DpSgdConfig { clip: f64::INFINITY, sigma: 0.0, lr: 0.7, ..Default::default() };
        let mut a = p.clone();
        dp_sgd_step(&mut a, &batch, &cfg, 8.0, &mut rng(0)).unwrap();
        let mut b = p.clone();
        sgd_step(&mut b, &batch, 0.7, 8.0).unwrap();
        assert!(a.params.iter().zip(&b.params).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn clipped_norms_bounded_and_training_reproducible() {
        let (p, data) = setup();
        let cfg = DpSgdConfig { clip: 1.0, sigma: 0.8, q: 0.2, steps: 100, lr: 0.5, seed: 3 };
        let mut max = 0.0f64;
        let a = train_dpft(p.clone(), &data, &cfg, 1e-5, |_, _, s| max = max.max(s.max_clipped_norm)).unwrap();
        assert!(max <= 1.0 + 1e-12);
        let b = train_dpft(p, &data, &cfg, 1e-5, |_, _, _| {}).unwrap();
        assert!(a.policy.params.iter().zip(&b.policy.params).all(|(x, y)| x.to_bits() == y.to_bits()));
        let expected = rdp_to_dp(&compose(&[MechanismSpec::subsampled_gaussian(0.8, 0.2, 100)]).unwrap(), 1e-5).unwrap();
        assert!((a.spend.epsilon - expected.epsilon).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_noise_only() {
        let (p, _) = setup();
        let mut q = p.clone();
        let cfg = DpSgdConfig { clip: 1.0, sigma: 1.0, lr: 1.0, ..Default::default() };
        dp_sgd_step(&mut q, &[], &cfg, 4.0, &mut rng(8)).unwrap();
        assert!(q.params.iter().any(|&x| x != 0.0));
        assert!(q.params.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn noiseless_training_improves_likelihood() {
        let (p, data) = setup();
        let cfg = DpSgdConfig { clip: f64::INFINITY, sigma: 0.0, q: 0.5, steps: 30, lr: 0.5, seed: 1 };
        let nll = |pol: &TokenPolicy| -> f64 { data.iter().map(|(f, t)| -pol.logprob(f, t).unwrap()).sum() };
        let before = nll(&p);
        let trained = train_dpft(p, &data, &cfg, 1e-5, |_, _, _| {}).unwrap();
        assert!(nll(&trained.policy) < before);
        assert!(trained.spend.epsilon.is_infinite());
    }
}
