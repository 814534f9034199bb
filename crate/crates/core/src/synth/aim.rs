use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{exp_mech_select, workload, FeatureSampler, MarginalQuery, SynthError, MAX_DOMAIN};
use crate::par;
use crate::rng::{derive_seed, rng, stream_seed};
use crate::schema::{FeatureRecord, Schema};

const SAMPLE_SHARD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AimConfig {
    /// Total zCDP budget.
    pub rho: f64,
    /// Number of select-and-measure rounds; `None` uses three per attribute.
    pub rounds: Option<usize>,
    /// Mirror-descent iterations after each measurement.
    pub fit_iters: usize,
    pub seed: u64,
}

impl Default for AimConfig {
    fn default() -> Self {
        Self { rho: 1.0, rounds: None, fit_iters: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub query: MarginalQuery,
    pub noisy: Vec<f64>,
    pub sigma: f64,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub query: MarginalQuery,
    pub rho_select: f64,
    pub rho_measure: f64,
    pub sigma: f64,
}

/// Log-linear joint model `p(x) ∝ exp(Σ_C θ_C[x_C])` over the measured
/// marginals, kept as an explicit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub schema_hash: String,
    pub cardinalities: Vec<usize>,
    #[serde(with = "factor_list")]
    pub factors: BTreeMap<MarginalQuery, Vec<f64>>,
    pub measurements: Vec<Measurement>,
    pub rounds: Vec<RoundRecord>,
    pub rho_total: f64,
    pub rho_spent: f64,
    pub notes: Vec<String>,
    #[serde(skip)]
    joint: Vec<f64>,
}

mod factor_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::synth::MarginalQuery;

    #[derive(Serialize, Deserialize)]
    struct Factor {
        attrs: Vec<usize>,
        theta: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<MarginalQuery, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<Factor> =
            map.iter().map(|(q, t)| Factor { attrs: q.attrs.clone(), theta: t.clone() }).collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<MarginalQuery, Vec<f64>>, D::Error> {
        let list = Vec::<Factor>::deserialize(d)?;
        Ok(list.into_iter().map(|f| (MarginalQuery { attrs: f.attrs }, f.theta)).collect())
    }
}

/// Visits every joint cell in mixed-radix order with its attribute values.
fn for_each_cell(cards: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = cards.iter().product();
    let mut values = vec![0usize; cards.len()];
    for idx in 0..total {
        f(idx, &values);
        for k in (0..cards.len()).rev() {
            values[k] += 1;
            if values[k] < cards[k] {
                break;
            }
            values[k] = 0;
        }
    }
}

/// Combined measurement target per query.
struct Target {
    query: MarginalQuery,
    dist: Vec<f64>,
    weight: f64,
}

impl MarginalModel {
    fn empty(schema: &Schema, rho_total: f64) -> Result<Self, SynthError> {
        let cards = schema.cardinalities();
        let domain = cards.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c)).unwrap_or(usize::MAX);
        if domain > MAX_DOMAIN {
            return Err(SynthError::DomainTooLarge(domain));
        }
        Ok(Self {
            schema_hash: schema.hash(),
            cardinalities: cards,
            factors: BTreeMap::new(),
            measurements: Vec::new(),
            rounds: Vec::new(),
            rho_total,
            rho_spent: 0.0,
            notes: Vec::new(),
            joint: vec![1.0 / domain as f64; domain],
        })
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<(), SynthError> {
        let found = schema.hash();
        if found != self.schema_hash {
            return Err(SynthError::SchemaMismatch { expected: self.schema_hash.clone(), found });
        }
        Ok(())
    }

    fn joint_from(cards: &[usize], factors: &BTreeMap<MarginalQuery, Vec<f64>>) -> Vec<f64> {
        let mut logits = vec![0.0; cards.iter().product()];
        for_each_cell(cards, |idx, values| {
            logits[idx] = factors.iter().map(|(q, theta)| theta[q.cell(values, cards)]).sum();
        });
        crate::gen::softmax(&logits)
    }

    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    fn project(cards: &[usize], joint: &[f64], query: &MarginalQuery) -> Vec<f64> {
        let mut out = vec![0.0; query.cells(cards)];
        for_each_cell(cards, |idx, values| out[query.cell(values, cards)] += joint[idx]);
        out
    }

    /// Model probabilities of a marginal query's cells.
    pub fn marginal(&self, query: &MarginalQuery) -> Vec<f64> {
        Self::project(&self.cardinalities, &self.joint, query)
    }

    pub fn one_way(&self) -> Vec<Vec<f64>> {
        (0..self.cardinalities.len()).map(|a| self.marginal(&MarginalQuery::new(vec![a]))).collect()
    }

    /// Inverse-variance estimate of the record count from the measurements.
    pub fn estimated_total(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for m in &self.measurements {
            let var = m.noisy.len() as f64 * m.sigma * m.sigma;
            let sum: f64 = m.noisy.iter().sum();
            if var == 0.0 {
                return sum.max(0.0);
            }
            num += sum / var;
            den += 1.0 / var;
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).max(0.0)
        }
    }

    fn targets(&self) -> Vec<Target> {
        let mut grouped: BTreeMap<&MarginalQuery, Vec<&Measurement>> = BTreeMap::new();
        for m in &self.measurements {
            grouped.entry(&m.query).or_default().push(m);
        }
        let mut out: Vec<Target> = grouped
            .into_iter()
            .map(|(q, ms)| {
                let exact: Vec<&&Measurement> = ms.iter().filter(|m| m.sigma == 0.0).collect();
                let (y, precision) = if let Some(m) = exact.first() {
                    (m.noisy.clone(), f64::INFINITY)
                } else {
                    let precision: f64 = ms.iter().map(|m| 1.0 / (m.sigma * m.sigma)).sum();
                    let mut y = vec![0.0; ms[0].noisy.len()];
                    for m in &ms {
                        let w = 1.0 / (m.sigma * m.sigma) / precision;
                        y.iter_mut().zip(&m.noisy).for_each(|(a, b)| *a += w * b);
                    }
                    (y, precision)
                };
                let clamped: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
                let s: f64 = clamped.iter().sum();
                let dist = if s > 0.0 {
                    clamped.iter().map(|v| v / s).collect()
                } else {
                    vec![1.0 / clamped.len() as f64; clamped.len()]
                };
                Target { query: q.clone(), dist, weight: precision }
            })
            .collect();
        let max = out.iter().map(|t| t.weight).fold(0.0, f64::max);
        for t in &mut out {
            t.weight = if max.is_infinite() {
                if t.weight.is_infinite() { 1.0 } else { 0.0 }
            } else {
                t.weight / max
            };
        }
        out
    }

    fn loss(cards: &[usize], joint: &[f64], targets: &[Target]) -> f64 {
        targets
            .iter()
            .map(|t| {
                let mu = Self::project(cards, joint, &t.query);
                t.weight * mu.iter().zip(&t.dist).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum()
    }

    /// Entropic mirror descent on the weighted squared error between model
    /// marginals and the clamped, normalized measurements. Step sizes
    /// backtrack so the loss never increases. Returns the loss trace.
    pub fn refit(&mut self, iters: usize) -> Vec<f64> {
        let targets = self.targets();
        for t in &targets {
            self.factors.entry(t.query.clone()).or_insert_with(|| vec![0.0; t.dist.len()]);
        }
        let cards = self.cardinalities.clone();
        self.joint = Self::joint_from(&cards, &self.factors);
        let mut loss = Self::loss(&cards, &self.joint, &targets);
        let mut trace = vec![loss];
        let mut eta = 1.0;
        for _ in 0..iters {
            if loss < 1e-20 {
                break;
            }
            let grads: Vec<Vec<f64>> = targets
                .iter()
                .map(|t| {
                    let mu = Self::project(&cards, &self.joint, &t.query);
                    mu.iter().zip(&t.dist).map(|(a, b)| 2.0 * t.weight * (a - b)).collect()
                })
                .collect();
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = self.factors.clone();
                for (t, g) in targets.iter().zip(&grads) {
                    let theta = trial.get_mut(&t.query).expect("factor exists");
                    theta.iter_mut().zip(g).for_each(|(th, gi)| *th -= eta * gi);
                }
                let joint = Self::joint_from(&cards, &trial);
                let l = Self::loss(&cards, &joint, &targets);
                if l <= loss {
                    self.factors = trial;
                    self.joint = joint;
                    loss = l;
                    eta *= 1.5;
                    accepted = true;
                    break;
                }
                eta *= 0.5;
            }
            trace.push(loss);
            if !accepted {
                break;
            }
        }
        trace
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| SynthError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let raw = std::fs::read_to_string(path)?;
        let mut m: Self = serde_json::from_str(&raw).map_err(|e| SynthError::Format(e.to_string()))?;
        for (q, theta) in &m.factors {
            if q.attrs.iter().any(|&a| a >= m.cardinalities.len()) || theta.len() != q.cells(&m.cardinalities) {
                return Err(SynthError::Format("factor shape does not match cardinalities".into()));
            }
        }
        let domain: usize = m.cardinalities.iter().product();
        if domain > MAX_DOMAIN {
            return Err(SynthError::DomainTooLarge(domain));
        }
        m.joint = Self::joint_from(&m.cardinalities, &m.factors);
        Ok(m)
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

/// Simplified AIM: `R` rounds with equal zCDP shares, half spent on selecting
/// a 1- or 2-way marginal with the exponential mechanism and half on a
/// Gaussian measurement of it, followed by a model refit.
pub fn aim_fit(features: &[FeatureRecord], schema: &Schema, cfg: &AimConfig) -> Result<MarginalModel, SynthError> {
    if !(cfg.rho > 0.0) {
        return Err(SynthError::Budget(cfg.rho));
    }
    if features.is_empty() {
        return Err(SynthError::NoRecords);
    }
    for f in features {
        schema.validate(f).map_err(|reason| SynthError::Format(reason))?;
    }
    let mut model = MarginalModel::empty(schema, cfg.rho)?;
    let cards = schema.cardinalities();
    let queries = workload(schema);
    let truth: Vec<Vec<f64>> = par::map(&queries, |q| q.counts(features, &cards));
    let rounds = cfg.rounds.unwrap_or(3 * schema.len()).max(1);
    let share = cfg.rho / rounds as f64;
    let mut select_rng = rng(derive_seed(cfg.seed, "aim/select"));
    let mut noise_rng = rng(derive_seed(cfg.seed, "aim/noise"));
    for round in 0..rounds {
        let remaining = cfg.rho - model.rho_spent;
        if remaining < share * (1.0 - 1e-9) {
            model.notes.push(format!("budget exhausted before round {round}"));
            break;
        }
        let share = if round + 1 == rounds { remaining } else { share };
        let (rho_select, rho_measure) = if queries.len() == 1 { (0.0, share) } else { (share / 2.0, share / 2.0) };
        let sigma = (1.0 / (2.0 * rho_measure)).sqrt();
        let chosen = if queries.len() == 1 {
            0
        } else {
            let n_hat = model.estimated_total();
            let qualities = par::map_range(queries.len(), |i| {
                let mu = model.marginal(&queries[i]);
                let l1: f64 = mu.iter().zip(&truth[i]).map(|(m, t)| (n_hat * m - t).abs()).sum();
                l1 - (queries[i].cells(&cards) as f64).sqrt() * sigma
            });
            let eps = (8.0 * rho_select).sqrt();
            exp_mech_select(&qualities, eps, 1.0, &mut select_rng)?
        };
        let noisy: Vec<f64> = truth[chosen]
            .iter()
            .map(|&c| {
                let z: f64 = noise_rng.sample(StandardNormal);
                c + sigma * z
            })
            .collect();
        model.measurements.push(Measurement { query: queries[chosen].clone(), noisy, sigma, round });
        model.rounds.push(RoundRecord { round, query: queries[chosen].clone(), rho_select, rho_measure, sigma });
        model.rho_spent += rho_select + rho_measure;
        let iters = if round + 1 == rounds { cfg.fit_iters * 5 } else { cfg.fit_iters };
        model.refit(iters);
    }
    Ok(model)
}

/// `n` independent draws from the model's joint table.
pub fn aim_sample(model: &MarginalModel, n: usize, seed: u64) -> Vec<FeatureRecord> {
    let mut cdf = Vec::with_capacity(model.joint.len());
    let mut acc = 0.0;
    for p in &model.joint {
        acc += p;
        cdf.push(acc);
    }
    let last = model.joint.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let shards = n.div_ceil(SAMPLE_SHARD);
    par::map_range(shards, |s| {
        let mut r = rng(stream_seed(seed, s as u64));
        let len = SAMPLE_SHARD.min(n - s * SAMPLE_SHARD);
        (0..len)
            .map(|_| {
                let u: f64 = r.random::<f64>() * acc;
                let idx = cdf.partition_point(|&c| c <= u).min(last);
                model.decode(idx)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

impl FeatureSampler for MarginalModel {
    fn sample(&self, n: usize, seed: u64) -> Vec<FeatureRecord> {
        aim_sample(self, n, seed)
    }
}
