use super::EvalError;
use crate::schema::{feature_histogram, FeatureRecord, Schema};
use serde::{Deserialize, Serialize};

const MASS_TOL: f64 = 1e-9;

fn check(p: &[f64]) -> Result<(), EvalError> {
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(EvalError::Distribution(format!("entry {x} is negative or not finite")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > MASS_TOL {
        return Err(EvalError::Distribution(format!("mass {s} is not 1")));
    }
    Ok(())
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).log2()).sum()
}

/// Jensen-Shannon distance (square root of the base-2 JS divergence), in `[0, 1]`.
pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64, EvalError> {
    if p.len() != q.len() {
        return Err(EvalError::Dimension(p.len(), q.len()));
    }
    check(p)?;
    check(q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let jsd = 0.5 * kl2(p, &m) + 0.5 * kl2(q, &m);
    Ok(jsd.clamp(0.0, 1.0).sqrt())
}

/// Per-attribute JS distances and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeJsd {
    pub mean: f64,
    pub per_attribute: Vec<f64>,
}

/// JS distance between the per-attribute option distributions of two
/// feature sets, averaged over attributes.
pub fn attribute_jsd(schema: &Schema, a: &[FeatureRecord], b: &[FeatureRecord]) -> Result<AttributeJsd, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty("feature set"));
    }
    let da = feature_histogram(a, schema)?;
    let db = feature_histogram(b, schema)?;
    let per_attribute = da
        .probs
        .iter()
        .zip(&db.probs)
        .map(|(p, q)| js_distance(p, q))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = per_attribute.iter().sum::<f64>() / per_attribute.len() as f64;
    Ok(AttributeJsd { mean, per_attribute })
}
