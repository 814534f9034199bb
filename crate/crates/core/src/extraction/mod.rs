//! Feature extraction: turning texts into schema-valid feature records.
//!
//! The extraction oracle is treated as a trusted component outside the
//! privacy analysis; annotating the private dataset spends no budget. The
//! crate ships a deterministic keyword [`Lexicon`] and an [`HttpOracle`]
//! client for an external service.

mod http;
mod lexicon;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

pub use http::HttpOracle;
pub use lexicon::{rule_extract, Lexicon, LexiconError, Pattern, Rule};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::js_distance;
use crate::schema::{feature_histogram, FeatureRecord, Schema, SchemaError, TextRecord};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    /// Network or service failure; retried.
    #[error("transport: {0}")]
    Transport(String),
    /// The oracle answered with something that is not a schema-valid record.
    #[error("non-conforming response: {0}")]
    NonConforming(String),
}

/// Anything that maps `(text, schema)` to a feature record.
pub trait Oracle: Sync {
    fn extract(&self, text: &TextRecord, schema: &Schema) -> Result<FeatureRecord, OracleError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotateConfig {
    /// Attempts after the first failed transport call.
    pub retries: u32,
    /// Initial backoff; doubles on each retry.
    pub backoff_ms: u64,
    /// Maximum number of concurrent oracle calls.
    pub parallelism: usize,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self { retries: 3, backoff_ms: 50, parallelism: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionFailure {
    pub index: usize,
    pub reason: String,
}

/// Paired dataset plus the positions that could not be annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotated {
    /// Input texts with `features` set, in input order; failures omitted.
    pub pairs: Vec<TextRecord>,
    pub failures: Vec<ExtractionFailure>,
}

impl Annotated {
    pub fn features(&self) -> Vec<FeatureRecord> {
        self.pairs.iter().filter_map(|r| r.features.clone()).collect()
    }
}

fn extract_with_retries<O: Oracle + ?Sized>(
    oracle: &O,
    text: &TextRecord,
    schema: &Schema,
    config: &AnnotateConfig,
) -> Result<FeatureRecord, OracleError> {
    let mut attempt = 0;
    loop {
        match oracle.extract(text, schema) {
            Err(OracleError::Transport(msg)) if attempt < config.retries => {
                let _ = msg;
                std::thread::sleep(Duration::from_millis(config.backoff_ms << attempt.min(16)));
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Annotates every text with the oracle, keeping input order. Failed
/// extractions are reported and left out of the paired set; the batch never
/// aborts.
pub fn annotate_dataset<O: Oracle + ?Sized>(
    oracle: &O,
    texts: &[TextRecord],
    schema: &Schema,
    config: &AnnotateConfig,
) -> Annotated {
    let results: Mutex<Vec<Option<Result<FeatureRecord, OracleError>>>> = Mutex::new(vec![None; texts.len()]);
    let next = AtomicUsize::new(0);
    let workers = config.parallelism.max(1).min(texts.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= texts.len() {
                    break;
                }
                let r = if texts[i].text.trim().is_empty() {
                    Err(OracleError::NonConforming("empty text".into()))
                } else {
                    extract_with_retries(oracle, &texts[i], schema, config)
                };
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut pairs = Vec::with_capacity(texts.len());
    let mut failures = Vec::new();
    for (index, r) in results.into_inner().expect("results lock").into_iter().enumerate() {
        match r.expect("every index visited") {
            Ok(f) => pairs.push(texts[index].clone().with_features(f)),
            Err(e) => failures.push(ExtractionFailure { index, reason: e.to_string() }),
        }
    }
    Annotated { pairs, failures }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("need at least two extraction trials, got {0}")]
    TooFewTrials(usize),
    #[error("trial {index} has {len} records, expected {expected}")]
    LengthMismatch { index: usize, len: usize, expected: usize },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Extraction error: mean JS distance between each trial's per-attribute
/// distribution and the across-trial average distribution.
pub fn extraction_error(trials: &[Vec<FeatureRecord>], schema: &Schema) -> Result<f64, ExtractionError> {
    if trials.len() < 2 {
        return Err(ExtractionError::TooFewTrials(trials.len()));
    }
    let expected = trials[0].len();
    for (index, t) in trials.iter().enumerate() {
        if t.len() != expected {
            return Err(ExtractionError::LengthMismatch { index, len: t.len(), expected });
        }
    }
    let dists = trials.iter().map(|t| feature_histogram(t, schema)).collect::<Result<Vec<_>, _>>()?;
    let m = trials.len() as f64;
    let mut total = 0.0;
    for k in 0..schema.len() {
        let card = schema.attribute(k).cardinality();
        let mut avg = vec![0.0; card];
        for d in &dists {
            for (a, p) in avg.iter_mut().zip(&d.probs[k]) {
                *a += p / m;
            }
        }
        let s: f64 = avg.iter().sum();
        avg.iter_mut().for_each(|a| *a /= s);
        for d in &dists {
            total += js_distance(&d.probs[k], &avg).expect("valid distributions");
        }
    }
    Ok(total / (m * schema.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn schema() -> Schema {
        Schema::from_pairs("t", &[("a", &["x", "y"][..])]).unwrap()
    }

    struct FailOn(usize);
    impl Oracle for FailOn {
        fn extract(&self, text: &TextRecord, _: &Schema) -> Result<FeatureRecord, OracleError> {
            if text.text == format!("t{}", self.0) {
                Err(OracleError::NonConforming("nope".into()))
            } else {
                Ok(FeatureRecord::new(vec![text.text.len() % 2]))
            }
        }
    }

    struct Flaky {
        calls: AtomicU32,
        fail_first: u32,
    }
    impl Oracle for Flaky {
        fn extract(&self, _: &TextRecord, _: &Schema) -> Result<FeatureRecord, OracleError> {
            let c = self.calls.fetch_add(1, Ordering::SeqCst);
            if c < self.fail_first {
                Err(OracleError::Transport("down".into()))
            } else {
                Ok(FeatureRecord::new(vec![0]))
            }
        }
    }

    fn texts(n: usize) -> Vec<TextRecord> {
        (0..n).map(|i| TextRecord::new(format!("t{i}"))).collect()
    }

    #[test]
    fn annotate_keeps_order_and_reports_failures() {
        let out = annotate_dataset(&FailOn(1), &texts(3), &schema(), &AnnotateConfig::default());
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[0].text, "t0");
        assert_eq!(out.pairs[1].text, "t2");
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].index, 1);
    }

    #[test]
    fn transport_failures_are_retried_then_recorded() {
        let cfg = AnnotateConfig { retries: 3, backoff_ms: 1, parallelism: 1 };
        let ok = Flaky { calls: AtomicU32::new(0), fail_first: 3 };
        let out = annotate_dataset(&ok, &texts(1), &schema(), &cfg);
        assert_eq!(out.pairs.len(), 1);
        let bad = Flaky { calls: AtomicU32::new(0), fail_first: 100 };
        let out = annotate_dataset(&bad, &texts(1), &schema(), &cfg);
        assert_eq!(out.pairs.len(), 0);
        assert_eq!(out.failures[0].index, 0);
        assert_eq!(bad.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn extraction_error_values() {
        let s = schema();
        let t = vec![FeatureRecord::new(vec![0]), FeatureRecord::new(vec![1])];
        assert_eq!(extraction_error(&vec![t.clone(); 5], &s).unwrap(), 0.0);
        let a = vec![FeatureRecord::new(vec![0]); 4];
        let b = vec![FeatureRecord::new(vec![1]); 4];
        let e = extraction_error(&[a.clone(), b], &s).unwrap();
        assert!((e - 0.557_923_045_284_143_8).abs() < 1e-12, "{e}");
        assert!(matches!(extraction_error(&[a.clone()], &s), Err(ExtractionError::TooFewTrials(1))));
        assert!(matches!(
            extraction_error(&[a, vec![FeatureRecord::new(vec![0])]], &s),
            Err(ExtractionError::LengthMismatch { index: 1, .. })
        ));
    }
}
