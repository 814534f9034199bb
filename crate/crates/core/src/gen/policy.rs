use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GenError, Vocab, BOS};
use crate::schema::{FeatureRecord, Schema};

const FORMAT_VERSION: u32 = 1;

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

/// Sparse gradient over whole parameter rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    row_len: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl Gradient {
    pub fn new(row_len: usize) -> Self {
        Self { row_len, rows: BTreeMap::new() }
    }

    pub fn row_mut(&mut self, row: usize) -> &mut Vec<f64> {
        let n = self.row_len;
        self.rows.entry(row).or_insert_with(|| vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.rows.values().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.rows.values_mut().flatten().for_each(|v| *v *= s);
    }

    /// `dense += s * self`.
    pub fn add_into(&self, dense: &mut [f64], s: f64) {
        for (&r, row) in &self.rows {
            let start = r * self.row_len;
            for (d, v) in dense[start..start + self.row_len].iter_mut().zip(row) {
                *d += s * v;
            }
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Gradient, s: f64) {
        for (&r, row) in &other.rows {
            for (d, v) in self.row_mut(r).iter_mut().zip(row) {
                *d += s * v;
            }
        }
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.add_into(&mut out, 1.0);
        out
    }
}

/// Log-linear next-token model: `logits(prev, f) = U[prev] + Σ_k V_k[f_k]`.
///
/// Parameters are stored row-major in one vector: `V` bigram rows followed by
/// one row per (attribute, option) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPolicy {
    vocab: Vocab,
    cardinalities: Vec<usize>,
    offsets: Vec<usize>,
    schema_hash: String,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    schema_hash: String,
    cardinalities: Vec<usize>,
    vocab: Vocab,
    params: Vec<f64>,
}

impl TokenPolicy {
    pub fn new(vocab: Vocab, schema: &Schema) -> Self {
        Self::from_parts(vocab, schema.cardinalities(), schema.hash(), None)
    }

    fn from_parts(vocab: Vocab, cardinalities: Vec<usize>, schema_hash: String, params: Option<Vec<f64>>) -> Self {
        let v = vocab.len();
        let mut offsets = Vec::with_capacity(cardinalities.len());
        let mut next = v;
        for c in &cardinalities {
            offsets.push(next);
            next += c;
        }
        let params = params.unwrap_or_else(|| vec![0.0; next * v]);
        Self { vocab, cardinalities, offsets, schema_hash, params }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn schema_hash(&self) -> &str {
        &self.schema_hash
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<(), GenError> {
        let found = schema.hash();
        if found != self.schema_hash {
            return Err(GenError::SchemaMismatch { expected: self.schema_hash.clone(), found });
        }
        Ok(())
    }

    pub fn check_feature(&self, f: &FeatureRecord) -> Result<(), GenError> {
        if f.values.len() != self.cardinalities.len() {
            return Err(GenError::Feature(format!(
                "{} values for {} attributes",
                f.values.len(),
                self.cardinalities.len()
            )));
        }
        for (k, (&v, &c)) in f.values.iter().zip(&self.cardinalities).enumerate() {
            if v >= c {
                return Err(GenError::Feature(format!("attribute {k}: option {v} of {c}")));
            }
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), GenError> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab.len()) {
            Some(&t) => Err(GenError::TokenId(t)),
            None => Ok(()),
        }
    }

    /// Row index of the bigram row for `prev`.
    pub fn bigram_row(&self, prev: u32) -> usize {
        prev as usize
    }

    /// Row index of the conditioning row for option `option` of attribute `k`.
    pub fn attribute_row(&self, k: usize, option: usize) -> usize {
        self.offsets[k] + option
    }

    fn row(&self, r: usize) -> &[f64] {
        let v = self.vocab.len();
        &self.params[r * v..(r + 1) * v]
    }

    pub fn logits(&self, prev: u32, f: &FeatureRecord) -> Vec<f64> {
        let mut z = self.row(self.bigram_row(prev)).to_vec();
        for (k, &o) in f.values.iter().enumerate() {
            for (a, b) in z.iter_mut().zip(self.row(self.attribute_row(k, o))) {
                *a += b;
            }
        }
        z
    }

    pub fn log_probs(&self, prev: u32, f: &FeatureRecord) -> Vec<f64> {
        log_softmax(&self.logits(prev, f))
    }

    /// Log-likelihood of `tokens` (which should end in EOS) given `f`,
    /// starting from BOS.
    pub fn logprob(&self, f: &FeatureRecord, tokens: &[u32]) -> Result<f64, GenError> {
        Ok(self.token_logprobs(f, tokens)?.iter().sum())
    }

    /// Per-position log-probabilities of `tokens`.
    pub fn token_logprobs(&self, f: &FeatureRecord, tokens: &[u32]) -> Result<Vec<f64>, GenError> {
        self.check_feature(f)?;
        self.check_tokens(tokens)?;
        let mut prev = BOS;
        Ok(tokens
            .iter()
            .map(|&t| {
                let lp = self.log_probs(prev, f)[t as usize];
                prev = t;
                lp
            })
            .collect())
    }

    /// Walks the sequence and accumulates a gradient. At each position the
    /// visitor receives `(position, token, log-probs)` and writes the
    /// derivative of its objective with respect to the logits into `out`
    /// (zeroed beforehand); returning `false` skips the position.
    pub fn accumulate<F>(&self, f: &FeatureRecord, tokens: &[u32], mut visit: F) -> Result<Gradient, GenError>
    where
        F: FnMut(usize, u32, u32, &[f64], &mut [f64]) -> bool,
    {
        self.check_feature(f)?;
        self.check_tokens(tokens)?;
        let v = self.vocab.len();
        let mut grad = Gradient::new(v);
        let mut out = vec![0.0; v];
        let mut prev = BOS;
        for (pos, &t) in tokens.iter().enumerate() {
            let lp = self.log_probs(prev, f);
            out.iter_mut().for_each(|o| *o = 0.0);
            if visit(pos, prev, t, &lp, &mut out) {
                let rows = std::iter::once(self.bigram_row(prev))
                    .chain(f.values.iter().enumerate().map(|(k, &o)| self.attribute_row(k, o)));
                for r in rows {
                    for (g, d) in grad.row_mut(r).iter_mut().zip(&out) {
                        *g += d;
                    }
                }
            }
            prev = t;
        }
        Ok(grad)
    }

    /// Exact gradient of [`TokenPolicy::logprob`].
    pub fn grad(&self, f: &FeatureRecord, tokens: &[u32]) -> Result<Gradient, GenError> {
        self.accumulate(f, tokens, |_, _, t, lp, out| {
            for (o, l) in out.iter_mut().zip(lp) {
                *o = -l.exp();
            }
            out[t as usize] += 1.0;
            true
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GenError> {
        let file = PolicyFile {
            version: FORMAT_VERSION,
            schema_hash: self.schema_hash.clone(),
            cardinalities: self.cardinalities.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string(&file).map_err(|e| GenError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenError> {
        let raw = std::fs::read_to_string(path)?;
        let file: PolicyFile = serde_json::from_str(&raw).map_err(|e| GenError::Format(e.to_string()))?;
        if file.version != FORMAT_VERSION {
            return Err(GenError::Format(format!("unsupported version {}", file.version)));
        }
        let rows = file.vocab.len() + file.cardinalities.iter().sum::<usize>();
        if file.params.len() != rows * file.vocab.len() {
            return Err(GenError::Format("parameter count does not match shape".into()));
        }
        if file.params.iter().any(|p| !p.is_finite()) {
            return Err(GenError::Format("non-finite parameter".into()));
        }
        Ok(Self::from_parts(file.vocab, file.cardinalities, file.schema_hash, Some(file.params)))
    }
}
