use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use super::{ifacc, AnchorDataset, ControlError};
use crate::eval::length_stats;
use crate::extraction::Oracle;
use crate::gen::{sample_batch, DecodingConfig, TokenPolicy, EOS};
use crate::par;
use crate::rng::{derive_seed, rng, stream_seed};
use crate::schema::{FeatureRecord, Schema};
use crate::synth::FeatureSampler;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArlConfig {
    pub buffer: usize,
    pub epochs: usize,
    pub lr: f64,
    pub kl_coef: f64,
    pub clip_ratio: f64,
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub rounds: usize,
    /// Anchor minibatch size; `None` uses a quarter of the buffer.
    pub anchor_batch: Option<usize>,
    /// Rollout length cap.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for ArlConfig {
    fn default() -> Self {
        Self {
            buffer: 512,
            epochs: 4,
            lr: 40.0,
            kl_coef: 0.2,
            clip_ratio: 0.2,
            gamma_start: 2.0,
            gamma_end: 0.5,
            rounds: 40,
            anchor_batch: None,
            max_tokens: 128,
            seed: 0,
        }
    }
}

impl ArlConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::Config(m.into()));
        if self.buffer == 0 || self.epochs == 0 || self.max_tokens == 0 {
            return bad("buffer, epochs and max_tokens must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.kl_coef >= 0.0 && self.clip_ratio > 0.0) {
            return bad("kl coefficient must be >= 0 and clip ratio > 0");
        }
        if !(self.gamma_start >= self.gamma_end && self.gamma_end >= 0.0) {
            return bad("anchor weights need start >= end >= 0");
        }
        Ok(())
    }

    fn anchor_batch(&self) -> usize {
        self.anchor_batch.unwrap_or(self.buffer / 4).max(1)
    }
}

/// Linear interpolation from `start` at step 0 to `end` at `total`.
pub fn gamma_schedule(step: usize, total: usize, start: f64, end: f64) -> f64 {
    if total == 0 {
        return start;
    }
    start + (end - start) * step.min(total) as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardedSample {
    pub feature: FeatureRecord,
    pub tokens: Vec<u32>,
    pub extracted: Option<FeatureRecord>,
    pub score: f64,
    /// Per-token log-probabilities under the sampling policy.
    pub old_logprobs: Vec<f64>,
}

/// Samples one rollout per prompt and scores it with the extractor.
pub fn rollouts<O: Oracle + ?Sized>(
    policy: &TokenPolicy,
    prompts: &[FeatureRecord],
    extractor: &O,
    schema: &Schema,
    max_tokens: usize,
    seed: u64,
) -> Result<Vec<RewardedSample>, ControlError> {
    let seqs = sample_batch(policy, prompts, &DecodingConfig::ancestral(max_tokens), seed);
    let scored = par::map_range(prompts.len(), |i| -> Result<RewardedSample, ControlError> {
        let text = policy.vocab().decode(&seqs[i]);
        let extracted = extractor.extract(&text, schema).ok();
        let score = ifacc(schema, &prompts[i], extracted.as_ref())?;
        let old_logprobs = policy.token_logprobs(&prompts[i], &seqs[i])?;
        Ok(RewardedSample { feature: prompts[i].clone(), tokens: seqs[i].clone(), extracted, score, old_logprobs })
    });
    scored.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_reward: f64,
    /// Mean clipped surrogate per sequence.
    pub surrogate: f64,
    /// Mean summed KL to the reference per sequence.
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Gradient (ascent direction, dense) of the clipped surrogate minus the
/// KL penalty, averaged over every token in the buffer. Advantages are
/// rewards minus `baseline`.
pub fn rl_gradient(
    policy: &TokenPolicy,
    samples: &[RewardedSample],
    reference: &TokenPolicy,
    cfg: &ArlConfig,
    baseline: f64,
) -> Result<(Vec<f64>, UpdateStats), ControlError> {
    let eps = cfg.clip_ratio;
    let beta = cfg.kl_coef;
    let per_sample = par::map(samples, |s| {
        let adv = s.score - baseline;
        let (mut surrogate, mut kl_sum, mut clipped) = (0.0, 0.0, 0usize);
        let grad = policy.accumulate(&s.feature, &s.tokens, |pos, prev, tok, lp, out| {
            let ratio = (lp[tok as usize] - s.old_logprobs[pos]).exp();
            let unclipped = ratio * adv;
            let bounded = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
            surrogate += unclipped.min(bounded);
            let mut touched = false;
            if unclipped <= bounded {
                if adv != 0.0 {
                    let c = adv * ratio;
                    for (o, l) in out.iter_mut().zip(lp) {
                        *o = -c * l.exp();
                    }
                    out[tok as usize] += c;
                    touched = true;
                }
            } else {
                clipped += 1;
            }
            if beta > 0.0 {
                let lr = reference.log_probs(prev, &s.feature);
                let kl: f64 = lp.iter().zip(&lr).map(|(a, b)| a.exp() * (a - b)).sum();
                kl_sum += kl;
                if kl != 0.0 || lp.iter().zip(&lr).any(|(a, b)| a != b) {
                    for ((o, a), b) in out.iter_mut().zip(lp).zip(&lr) {
                        *o -= beta * a.exp() * (a - b - kl);
                    }
                    touched = true;
                }
            }
            touched
        });
        grad.map(|g| (g, surrogate, kl_sum, clipped, s.tokens.len()))
    });
    let n = samples.len().max(1) as f64;
    let total: usize = samples.iter().map(|s| s.tokens.len()).sum();
    let per_token = 1.0 / total.max(1) as f64;
    let mut dense = vec![0.0; policy.num_params()];
    let mut stats = UpdateStats::default();
    let (mut clipped, mut tokens) = (0usize, 0usize);
    for (r, s) in per_sample.into_iter().zip(samples) {
        let (g, surrogate, kl, c, len) = r?;
        g.add_into(&mut dense, per_token);
        stats.mean_reward += s.score / n;
        stats.surrogate += surrogate / n;
        stats.kl += kl / n;
        clipped += c;
        tokens += len;
    }
    stats.clip_fraction = clipped as f64 / tokens.max(1) as f64;
    Ok((dense, stats))
}

fn check_finite(grad: &[f64], stats: &UpdateStats, round: usize, epoch: usize) -> Result<(), ControlError> {
    if grad.iter().all(|g| g.is_finite()) && stats.surrogate.is_finite() && stats.kl.is_finite() {
        return Ok(());
    }
    Err(ControlError::NonFinite { round, epoch, detail: format!("{stats:?}") })
}

/// `epochs` clipped policy-gradient ascent steps over one rollout buffer.
pub fn rl_update(
    policy: &mut TokenPolicy,
    samples: &[RewardedSample],
    reference: &TokenPolicy,
    cfg: &ArlConfig,
) -> Result<Vec<UpdateStats>, ControlError> {
    let baseline = buffer_mean(samples);
    let mut out = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (g, stats) = rl_gradient(policy, samples, reference, cfg, baseline)?;
        check_finite(&g, &stats, 0, epoch)?;
        for (p, gi) in policy.params.iter_mut().zip(&g) {
            *p += cfg.lr * gi;
        }
        out.push(stats);
    }
    Ok(out)
}

fn buffer_mean(samples: &[RewardedSample]) -> f64 {
    if samples.is_empty() {
        0.0
    } else {
        samples.iter().map(|s| s.score).sum::<f64>() / samples.len() as f64
    }
}

/// Per-token log-likelihood gradient over anchor entries, with the per-token
/// negative log-likelihood.
fn sft_gradient(policy: &TokenPolicy, batch: &[(&FeatureRecord, &[u32])]) -> Result<(Vec<f64>, f64), ControlError> {
    let grads = par::map(batch, |(f, t)| policy.grad(f, t).and_then(|g| Ok((g, policy.logprob(f, t)?))));
    let total: usize = batch.iter().map(|(_, t)| t.len()).sum();
    let per_token = 1.0 / total.max(1) as f64;
    let mut dense = vec![0.0; policy.num_params()];
    let mut nll = 0.0;
    for r in grads {
        let (g, lp) = r?;
        g.add_into(&mut dense, per_token);
        nll -= lp * per_token;
    }
    Ok((dense, nll))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub mean_reward: f64,
    pub median_length: f64,
    pub collapse_fraction: f64,
    pub kl: f64,
    pub gamma: f64,
    pub rl_loss: f64,
    pub sft_loss: f64,
    pub clip_fraction: f64,
}

impl RoundLog {
    pub const HEADER: &'static str =
        "round,mean_reward,median_length,collapse_fraction,kl,gamma,rl_loss,sft_loss,clip_fraction";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.round,
            self.mean_reward,
            self.median_length,
            self.collapse_fraction,
            self.kl,
            self.gamma,
            self.rl_loss,
            self.sft_loss,
            self.clip_fraction
        )
    }
}

pub fn write_log(path: impl AsRef<Path>, rows: &[RoundLog]) -> Result<(), ControlError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", RoundLog::HEADER)?;
    for r in rows {
        writeln!(f, "{}", r.csv())?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TokenPolicy,
    pub log: Vec<RoundLog>,
}

fn content_lengths(samples: &[RewardedSample]) -> Vec<usize> {
    samples.iter().map(|s| s.tokens.iter().filter(|&&t| t != EOS).count()).collect()
}

/// Anchored RL: every round fills a rollout buffer with prompts from the
/// feature generator, then applies `epochs` steps of
/// `g_RL + γ · g_SFT`, where `g_SFT` is the likelihood gradient on an anchor
/// minibatch and γ decays linearly over rounds. With γ ≡ 0 the anchor is
/// never touched and the trajectory equals [`rl_train`].
#[allow(clippy::too_many_arguments)]
pub fn arl_train<S: FeatureSampler + ?Sized, O: Oracle + ?Sized>(
    init: &TokenPolicy,
    reference: &TokenPolicy,
    sampler: &S,
    anchor: &AnchorDataset,
    extractor: &O,
    schema: &Schema,
    cfg: &ArlConfig,
) -> Result<TrainOutcome, ControlError> {
    cfg.validate()?;
    let anchored = cfg.gamma_start > 0.0;
    if anchored && anchor.is_empty() {
        return Err(ControlError::EmptyAnchor);
    }
    let mut policy = init.clone();
    let prompt_seed = derive_seed(cfg.seed, "rl/prompts");
    let rollout_seed = derive_seed(cfg.seed, "rl/rollouts");
    let anchor_seed = derive_seed(cfg.seed, "arl/anchor");
    let mut reference_median = None;
    let mut log = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let gamma = gamma_schedule(round, cfg.rounds.saturating_sub(1), cfg.gamma_start, cfg.gamma_end);
        let prompts = sampler.sample(cfg.buffer, stream_seed(prompt_seed, round as u64));
        let samples = rollouts(&policy, &prompts, extractor, schema, cfg.max_tokens, stream_seed(rollout_seed, round as u64))?;
        let lengths = content_lengths(&samples);
        let stats0 = length_stats(&lengths, reference_median).expect("non-empty buffer");
        let reference_median = *reference_median.get_or_insert(stats0.median);
        let ls = length_stats(&lengths, Some(reference_median)).expect("non-empty buffer");
        let baseline = buffer_mean(&samples);
        let batch: Vec<(&FeatureRecord, &[u32])> = if anchored && gamma > 0.0 {
            let mut r = rng(stream_seed(anchor_seed, round as u64));
            let k = cfg.anchor_batch().min(anchor.len());
            sample_indices(&mut r, anchor.len(), k)
                .into_iter()
                .map(|i| (&anchor.entries[i].feature, anchor.entries[i].tokens.as_slice()))
                .collect()
        } else {
            Vec::new()
        };
        let mut row = RoundLog {
            round,
            mean_reward: baseline,
            median_length: ls.median,
            collapse_fraction: ls.collapse_fraction,
            kl: 0.0,
            gamma,
            rl_loss: 0.0,
            sft_loss: 0.0,
            clip_fraction: 0.0,
        };
        for epoch in 0..cfg.epochs {
            let (g, stats) = rl_gradient(&policy, &samples, reference, cfg, baseline)?;
            check_finite(&g, &stats, round, epoch)?;
            if epoch == 0 {
                row.kl = stats.kl;
                row.rl_loss = -stats.surrogate + cfg.kl_coef * stats.kl;
            }
            row.clip_fraction = stats.clip_fraction;
            if batch.is_empty() {
                for (p, gi) in policy.params.iter_mut().zip(&g) {
                    *p += cfg.lr * gi;
                }
            } else {
                let (s, nll) = sft_gradient(&policy, &batch)?;
                if !nll.is_finite() {
                    return Err(ControlError::NonFinite { round, epoch, detail: format!("anchor nll {nll}") });
                }
                if epoch == 0 {
                    row.sft_loss = nll;
                }
                for ((p, gi), si) in policy.params.iter_mut().zip(&g).zip(&s) {
                    *p += cfg.lr * (gi + gamma * si);
                }
            }
        }
        log.push(row);
    }
    Ok(TrainOutcome { policy, log })
}

/// Plain RL against the extraction reward, without an anchor.
pub fn rl_train<S: FeatureSampler + ?Sized, O: Oracle + ?Sized>(
    init: &TokenPolicy,
    reference: &TokenPolicy,
    sampler: &S,
    extractor: &O,
    schema: &Schema,
    cfg: &ArlConfig,
) -> Result<TrainOutcome, ControlError> {
    cfg.validate()?;
    let mut policy = init.clone();
    let prompt_seed = derive_seed(cfg.seed, "rl/prompts");
    let rollout_seed = derive_seed(cfg.seed, "rl/rollouts");
    let mut reference_median = None;
    let mut log = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let prompts = sampler.sample(cfg.buffer, stream_seed(prompt_seed, round as u64));
        let samples = rollouts(&policy, &prompts, extractor, schema, cfg.max_tokens, stream_seed(rollout_seed, round as u64))?;
        let lengths = content_lengths(&samples);
        let first = length_stats(&lengths, reference_median).expect("non-empty buffer");
        let reference_median = *reference_median.get_or_insert(first.median);
        let ls = length_stats(&lengths, Some(reference_median)).expect("non-empty buffer");
        let stats = rl_update(&mut policy, &samples, reference, cfg).map_err(|e| match e {
            ControlError::NonFinite { epoch, detail, .. } => ControlError::NonFinite { round, epoch, detail },
            other => other,
        })?;
        log.push(RoundLog {
            round,
            mean_reward: stats[0].mean_reward,
            median_length: ls.median,
            collapse_fraction: ls.collapse_fraction,
            kl: stats[0].kl,
            gamma: 0.0,
            rl_loss: -stats[0].surrogate + cfg.kl_coef * stats[0].kl,
            sft_loss: 0.0,
            clip_fraction: stats.last().map_or(0.0, |s| s.clip_fraction),
        });
    }
    Ok(TrainOutcome { policy, log })
}
