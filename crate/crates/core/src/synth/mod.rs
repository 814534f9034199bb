//! Stage-one feature generators: a simplified AIM marginal synthesizer and
//! a DP histogram over the flattened joint domain.

mod aim;
mod histogram;

pub use aim::{aim_fit, aim_sample, AimConfig, MarginalModel, Measurement, RoundRecord};
pub use histogram::{dp_histogram_fit, fit_feature_histogram, histogram_sample, DpHistogram, FeatureHistogram};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::AccountantError;
use crate::rng::Rng;
use crate::schema::{FeatureRecord, Schema, SchemaError};

/// Largest joint domain the explicit-table models will materialize.
pub const MAX_DOMAIN: usize = 1 << 22;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("non-finite quality score at index {0}")]
    NonFiniteQuality(usize),
    #[error("sensitivity must be positive, got {0}")]
    Sensitivity(f64),
    #[error("privacy parameter must be positive, got {0}")]
    Budget(f64),
    #[error("joint domain of {0} cells exceeds the supported maximum")]
    DomainTooLarge(usize),
    #[error("noise-dominated histogram: every bin fell at or below the threshold")]
    NoiseDominated,
    #[error("no private records")]
    NoRecords,
    #[error("model was fitted for schema {expected}, got {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Source of synthetic feature records.
pub trait FeatureSampler: Sync {
    fn sample(&self, n: usize, seed: u64) -> Vec<FeatureRecord>;
}

/// A 1- or 2-way marginal over the schema's attributes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MarginalQuery {
    pub attrs: Vec<usize>,
}

impl MarginalQuery {
    pub fn new(attrs: Vec<usize>) -> Self {
        debug_assert!(matches!(attrs.len(), 1 | 2));
        Self { attrs }
    }

    pub fn cells(&self, cards: &[usize]) -> usize {
        self.attrs.iter().map(|&a| cards[a]).product()
    }

    pub fn cell(&self, values: &[usize], cards: &[usize]) -> usize {
        self.attrs.iter().fold(0, |acc, &a| acc * cards[a] + values[a])
    }

    pub fn counts(&self, records: &[FeatureRecord], cards: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.cells(cards)];
        for r in records {
            out[self.cell(&r.values, cards)] += 1.0;
        }
        out
    }
}

/// All 1-way marginals followed by all 2-way marginals.
pub fn workload(schema: &Schema) -> Vec<MarginalQuery> {
    let k = schema.len();
    let mut out: Vec<MarginalQuery> = (0..k).map(|a| MarginalQuery::new(vec![a])).collect();
    for a in 0..k {
        for b in a + 1..k {
            out.push(MarginalQuery::new(vec![a, b]));
        }
    }
    out
}

/// Selection probabilities of the exponential mechanism,
/// `P(i) ∝ exp(eps · quality_i / (2Δ))`.
pub fn exp_mech_probs(qualities: &[f64], eps: f64, sensitivity: f64) -> Result<Vec<f64>, SynthError> {
    if qualities.is_empty() {
        return Err(SynthError::NoCandidates);
    }
    if let Some(i) = qualities.iter().position(|q| !q.is_finite()) {
        return Err(SynthError::NonFiniteQuality(i));
    }
    if !(sensitivity > 0.0) {
        return Err(SynthError::Sensitivity(sensitivity));
    }
    if eps.is_infinite() {
        let best = qualities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners = qualities.iter().filter(|&&q| q == best).count() as f64;
        return Ok(qualities.iter().map(|&q| if q == best { 1.0 / winners } else { 0.0 }).collect());
    }
    let scores: Vec<f64> = qualities.iter().map(|q| eps * q / (2.0 * sensitivity)).collect();
    Ok(crate::gen::softmax(&scores))
}

pub fn exp_mech_select(qualities: &[f64], eps: f64, sensitivity: f64, rng: &mut Rng) -> Result<usize, SynthError> {
    let probs = exp_mech_probs(qualities, eps, sensitivity)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
}
