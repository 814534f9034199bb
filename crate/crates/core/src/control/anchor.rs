use serde::{Deserialize, Serialize};

use super::{ifacc, ControlError};
use crate::extraction::Oracle;
use crate::gen::{sample_tokens, DecodingConfig, TokenPolicy};
use crate::par;
use crate::rng::{derive_seed, rng, stream_seed};
use crate::schema::{FeatureRecord, Schema, TextRecord};
use crate::synth::FeatureSampler;

#[derive(Debug, Clone, PartialEq)]
pub struct BestOfN {
    pub tokens: Vec<u32>,
    pub text: TextRecord,
    pub score: f64,
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Draws `n` candidates (candidate `i` from stream `i` of `seed`) and keeps
/// the highest-scoring one; ties go to the lowest index.
#[allow(clippy::too_many_arguments)]
pub fn best_of_n<O: Oracle + ?Sized>(
    policy: &TokenPolicy,
    extractor: &O,
    schema: &Schema,
    feature: &FeatureRecord,
    n: usize,
    decoding: &DecodingConfig,
    seed: u64,
) -> Result<BestOfN, ControlError> {
    if n == 0 {
        return Err(ControlError::Config("best-of-n needs n >= 1".into()));
    }
    let mut best: Option<BestOfN> = None;
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let tokens = sample_tokens(policy, feature, decoding, &mut rng(stream_seed(seed, i as u64)));
        let text = policy.vocab().decode(&tokens);
        let score = ifacc(schema, feature, extractor.extract(&text, schema).ok().as_ref())?;
        scores.push(score);
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(BestOfN { tokens, text, score, index: i, scores: Vec::new() });
        }
    }
    let mut best = best.expect("n >= 1");
    best.scores = scores;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub feature: FeatureRecord,
    pub text: String,
    pub tokens: Vec<u32>,
    pub score: f64,
    pub n: usize,
}

/// Best-of-N texts for prompts drawn from the feature generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnchorDataset {
    pub entries: Vec<AnchorEntry>,
}

impl AnchorDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean_score(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.score).sum::<f64>() / self.entries.len() as f64
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), ControlError> {
        let json = serde_json::to_string(self).map_err(|e| ControlError::Config(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ControlError> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| ControlError::Config(e.to_string()))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_anchor_dataset<S: FeatureSampler + ?Sized, O: Oracle + ?Sized>(
    sampler: &S,
    policy: &TokenPolicy,
    extractor: &O,
    schema: &Schema,
    n: usize,
    n_prompts: usize,
    decoding: &DecodingConfig,
    seed: u64,
) -> Result<AnchorDataset, ControlError> {
    let prompts = sampler.sample(n_prompts, derive_seed(seed, "anchor/prompts"));
    let cand_seed = derive_seed(seed, "anchor/candidates");
    let results = par::map_range(prompts.len(), |i| {
        best_of_n(policy, extractor, schema, &prompts[i], n, decoding, stream_seed(cand_seed, i as u64))
    });
    let mut entries = Vec::with_capacity(prompts.len());
    for (f, r) in prompts.into_iter().zip(results) {
        let b = r?;
        entries.push(AnchorEntry { feature: f, text: b.text.text, tokens: b.tokens, score: b.score, n });
    }
    Ok(AnchorDataset { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::rl::tests::{fixture, Alternating, FirstMention};
    use crate::extraction::OracleError;

    struct Never;

    impl Oracle for Never {
        fn extract(&self, _: &TextRecord, _: &Schema) -> Result<FeatureRecord, OracleError> {
            Err(OracleError::NonConforming("never".into()))
        }
    }

    #[test]
    fn more_candidates_never_score_lower() {
        let (schema, p) = fixture();
        let dec = DecodingConfig::ancestral(12);
        for i in 0..10 {
            let f = FeatureRecord::new(vec![i % 2]);
            let mut last = f64::NEG_INFINITY;
            for n in [1, 2, 4, 8, 16] {
                let b = best_of_n(&p, &FirstMention, &schema, &f, n, &dec, i as u64).unwrap();
                assert!(b.score >= last);
                assert_eq!(b.scores.len(), n);
                assert_eq!(b.score, b.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                last = b.score;
            }
        }
    }

    #[test]
    fn ties_go_to_first_candidate() {
        let (schema, p) = fixture();
        let dec = DecodingConfig::ancestral(12);
        let f = FeatureRecord::new(vec![0]);
        let b = best_of_n(&p, &Never, &schema, &f, 8, &dec, 3).unwrap();
        assert_eq!((b.index, b.score), (0, 0.0));
        let first = sample_tokens(&p, &f, &dec, &mut rng(stream_seed(3, 0)));
        assert_eq!(b.tokens, first);
        assert!(best_of_n(&p, &Never, &schema, &f, 0, &dec, 3).is_err());
    }

    #[test]
    fn anchor_dataset_is_deterministic() {
        let (schema, p) = fixture();
        let dec = DecodingConfig::ancestral(12);
        let a = build_anchor_dataset(&Alternating, &p, &FirstMention, &schema, 4, 20, &dec, 1).unwrap();
        let b = build_anchor_dataset(&Alternating, &p, &FirstMention, &schema, 4, 20, &dec, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.entries.iter().all(|e| e.n == 4 && e.text == p.vocab().decode(&e.tokens).text));
        let empty = build_anchor_dataset(&Alternating, &p, &FirstMention, &schema, 4, 0, &dec, 1).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.mean_score(), 0.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchor.json");
        a.save(&path).unwrap();
        assert_eq!(AnchorDataset::load(&path).unwrap(), a);
    }
}
