use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::control::ifacc;
use crate::extraction::Oracle;
use crate::par;
use crate::schema::{FeatureRecord, Schema, TextRecord};

/// Named scalar metrics with optional per-attribute breakdowns and run
/// metadata. Keys are kept sorted so CSV columns are stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scalars: BTreeMap<String, f64>,
    pub per_attribute: BTreeMap<String, BTreeMap<String, f64>>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a scalar. Non-finite values are rejected.
    pub fn set(&mut self, name: impl Into<String>, value: f64) -> Result<(), EvalError> {
        let name = name.into();
        if !value.is_finite() {
            return Err(EvalError::NonFinite(name));
        }
        self.scalars.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied()
    }

    pub fn set_breakdown(&mut self, metric: impl Into<String>, schema: &Schema, values: &[f64]) {
        let row = schema
            .attributes()
            .iter()
            .zip(values)
            .map(|(a, v)| (a.name.clone(), *v))
            .collect();
        self.per_attribute.insert(metric.into(), row);
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl Into<serde_json::Value>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header(&self) -> Vec<String> {
        self.scalars.keys().cloned().collect()
    }

    pub fn csv_row(&self) -> Vec<String> {
        self.scalars.values().map(|v| format!("{v}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfaccReport {
    pub mean: f64,
    /// Fraction of pairs whose extracted option matches, per attribute.
    pub per_attribute: Vec<f64>,
    pub scores: Vec<f64>,
    pub failures: usize,
}

/// Mean instruction-following accuracy of `(input feature, generated text)`
/// pairs, scored by re-extracting features from each text.
pub fn dataset_ifacc<O: Oracle + ?Sized>(
    pairs: &[(FeatureRecord, TextRecord)],
    extractor: &O,
    schema: &Schema,
) -> Result<IfaccReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty("ifacc pairs"));
    }
    let extracted = par::map(pairs, |(_, text)| extractor.extract(text, schema).ok());
    let mut scores = Vec::with_capacity(pairs.len());
    let mut matches = vec![0usize; schema.len()];
    let mut failures = 0;
    for ((f, _), hat) in pairs.iter().zip(&extracted) {
        scores.push(ifacc(schema, f, hat.as_ref()).map_err(|e| EvalError::Distribution(e.to_string()))?);
        match hat {
            Some(h) => {
                for (k, m) in matches.iter_mut().enumerate() {
                    *m += usize::from(f.values[k] == h.values[k]);
                }
            }
            None => failures += 1,
        }
    }
    let n = pairs.len() as f64;
    Ok(IfaccReport {
        mean: scores.iter().sum::<f64>() / n,
        per_attribute: matches.iter().map(|&m| m as f64 / n).collect(),
        scores,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub median: f64,
    pub mean: f64,
    pub p10: f64,
    /// Share of texts shorter than a quarter of the reference median.
    pub collapse_fraction: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Token-count statistics. Without a reference median, the sample's own
/// median is used for the collapse threshold.
pub fn length_stats(lengths: &[usize], reference_median: Option<f64>) -> Result<LengthStats, EvalError> {
    if lengths.is_empty() {
        return Err(EvalError::Empty("length stats"));
    }
    let mut sorted: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    let threshold = 0.25 * reference_median.unwrap_or(median);
    Ok(LengthStats {
        median,
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p10: quantile(&sorted, 0.1),
        collapse_fraction: sorted.iter().filter(|&&l| l < threshold).count() as f64 / sorted.len() as f64,
    })
}
