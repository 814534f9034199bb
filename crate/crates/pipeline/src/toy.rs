//! Writes the desk-world corpus and a matching run config.

use std::path::{Path, PathBuf};

use actg_core::control::ArlConfig;
use actg_core::schema::{save_jsonl, TextRecord};
use actg_core::toy::{toy_corpus, toy_lexicon, toy_schema, toy_vocabulary, ToyConfig};

use crate::config::{AnchorConfig, DpFtConfig, GenerateConfig, RunConfig};
use crate::PipelineError;

/// Seed of the held-out reference corpus.
pub const REFERENCE_SEED: u64 = 99;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyInputs {
    pub private: PathBuf,
    pub reference: PathBuf,
    pub schema: PathBuf,
    pub lexicon: PathBuf,
    pub vocabulary: PathBuf,
}

/// Writes `private.jsonl` (texts only), `reference.jsonl`, `schema.json`,
/// `lexicon.json` and `vocabulary.txt` into `dir`.
pub fn write_toy_inputs(dir: &Path, corpus: &ToyConfig, reference_n: usize) -> Result<ToyInputs, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let schema = toy_schema();
    let inputs = ToyInputs {
        private: dir.join("private.jsonl"),
        reference: dir.join("reference.jsonl"),
        schema: dir.join("schema.json"),
        lexicon: dir.join("lexicon.json"),
        vocabulary: dir.join("vocabulary.txt"),
    };
    let texts_only = |cfg: &ToyConfig| -> Vec<TextRecord> {
        toy_corpus(cfg).into_iter().map(|(_, t)| TextRecord::new(t.text)).collect()
    };
    let stage = |e: actg_core::schema::SchemaError| PipelineError::stage("toy corpus", e);
    save_jsonl(&inputs.private, &texts_only(corpus), &schema).map_err(stage)?;
    let reference = ToyConfig { n: reference_n, seed: REFERENCE_SEED, ..*corpus };
    save_jsonl(&inputs.reference, &texts_only(&reference), &schema).map_err(stage)?;
    schema.save(&inputs.schema).map_err(stage)?;
    let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| PipelineError::io(p, e));
    write(&inputs.lexicon, toy_lexicon(&schema).to_json(&schema))?;
    write(&inputs.vocabulary, toy_vocabulary().join("\n") + "\n")?;
    Ok(inputs)
}

/// Run config over toy inputs with the settings used by the reward-hacking
/// comparison: `ε = 4`, clip 12 with `q = 0.05` over 600 steps, `N = 16`
/// over 1000 prompts, 40 control rounds with KL 0.02 and γ from 2 to 0.5.
pub fn toy_run_config(inputs: &ToyInputs, out: impl Into<PathBuf>) -> RunConfig {
    let mut cfg = RunConfig::new(&inputs.private, &inputs.schema, out);
    cfg.seed = 1;
    cfg.data.vocabulary = Some(inputs.vocabulary.clone());
    cfg.data.reference = Some(inputs.reference.clone());
    cfg.oracle.lexicon = Some(inputs.lexicon.clone());
    cfg.privacy.epsilon = 4.0;
    cfg.privacy.split = 0.3;
    cfg.dpsgd = DpFtConfig { clip: 12.0, q: 0.05, steps: 600, lr: 0.5 };
    cfg.anchor = AnchorConfig { n: 16, prompts: 1000, ..Default::default() };
    cfg.arl = ArlConfig { lr: 40.0, kl_coef: 0.02, rounds: 40, gamma_start: 2.0, gamma_end: 0.5, ..Default::default() };
    cfg.generate = GenerateConfig { n_syn: 2000, ..Default::default() };
    cfg
}

/// Corpus behind [`toy_run_config`].
pub fn toy_corpus_config() -> ToyConfig {
    ToyConfig { n: 10_000, seed: 1, ..Default::default() }
}
