//! Run configuration: one TOML (or JSON) document with a section per stage.
//!
//! Relative paths are resolved against the directory holding the config
//! file. The config hash covers everything except the output directory, so
//! the same run written to two places carries the same stamp.

use std::path::{Path, PathBuf};

use actg_core::control::ArlConfig;
use actg_core::gen::DecodingConfig;
use actg_core::rng::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage1Method {
    Aim,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Private JSONL corpus (`{"text": ...}` per line).
    pub private: PathBuf,
    pub schema: PathBuf,
    /// Public token list, one per line. Without it the vocabulary is read
    /// off the private corpus, which the ledger flags.
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    /// Public evaluation corpus for MAUVE and the feature-distribution metrics.
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Keyword lexicon (JSON).
    pub lexicon: Option<PathBuf>,
    /// HTTP extraction service; used when no lexicon is given.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub parallelism: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { lexicon: None, endpoint: None, timeout_ms: 30_000, retries: 3, parallelism: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Total `ε`; `inf` trains without noise.
    #[serde(with = "actg_core::json_float")]
    pub epsilon: f64,
    /// Share of `ε` given to the feature generator.
    pub split: f64,
    /// Overrides the size-based `δ` rule.
    pub delta: Option<f64>,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self { epsilon: 4.0, split: 0.3, delta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub method: Stage1Method,
    /// AIM rounds; `None` uses three per attribute.
    pub rounds: Option<usize>,
    pub fit_iters: usize,
    /// Histogram threshold on noisy counts.
    pub threshold: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { method: Stage1Method::Aim, rounds: None, fit_iters: 200, threshold: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpFtConfig {
    #[serde(with = "actg_core::json_float")]
    pub clip: f64,
    pub q: f64,
    pub steps: u64,
    pub lr: f64,
}

impl Default for DpFtConfig {
    fn default() -> Self {
        Self { clip: 1.0, q: 0.05, steps: 600, lr: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Candidates per prompt.
    pub n: usize,
    pub prompts: usize,
    pub decoding: DecodingConfig,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { n: 16, prompts: 1000, decoding: DecodingConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n_syn: usize,
    pub decoding: DecodingConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { n_syn: 5000, decoding: DecodingConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `None` uses a tenth of the synthetic set.
    pub clusters: Option<usize>,
    pub scaling: f64,
    pub max_iter: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { clusters: None, scaling: 5.0, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub dpsgd: DpFtConfig,
    #[serde(default)]
    pub anchor: AnchorConfig,
    #[serde(default)]
    pub arl: ArlConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

impl RunConfig {
    /// A config with defaults everywhere except the data paths.
    pub fn new(private: impl Into<PathBuf>, schema: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            out: out.into(),
            data: DataConfig { private: private.into(), schema: schema.into(), vocabulary: None, reference: None },
            oracle: OracleConfig::default(),
            privacy: PrivacyConfig::default(),
            stage1: Stage1Config::default(),
            dpsgd: DpFtConfig::default(),
            anchor: AnchorConfig::default(),
            arl: ArlConfig::default(),
            generate: GenerateConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Parses a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&raw).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        fix(&mut self.data.private);
        fix(&mut self.data.schema);
        if let Some(p) = self.data.vocabulary.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.reference.as_mut() {
            fix(p);
        }
        if let Some(p) = self.oracle.lexicon.as_mut() {
            fix(p);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_string(&c).expect("config serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed of one stage: a keyed hash of the master seed and the stage name.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    /// Checks values and that every input file exists. `private` is skipped
    /// when the private phase has already been sealed.
    pub fn validate(&self, check_private: bool) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let eps = self.privacy.epsilon;
        if !(eps > 0.0) {
            return bad(format!("epsilon must be positive or inf, got {eps}"));
        }
        if !(self.privacy.split > 0.0 && self.privacy.split < 1.0) {
            return bad(format!("split must lie in (0, 1), got {}", self.privacy.split));
        }
        if let Some(d) = self.privacy.delta {
            if !(d > 0.0 && d < 1.0) {
                return bad(format!("delta must lie in (0, 1), got {d}"));
            }
        }
        let d = &self.dpsgd;
        if !(d.clip > 0.0 && d.q > 0.0 && d.q <= 1.0 && d.steps > 0 && d.lr > 0.0) {
            return bad("dpsgd needs clip > 0, q in (0, 1], steps > 0 and lr > 0".into());
        }
        if eps.is_finite() && d.clip.is_infinite() {
            return bad("a finite epsilon needs a finite clip norm".into());
        }
        if self.anchor.n == 0 || self.generate.n_syn == 0 {
            return bad("anchor.n and generate.n_syn must be positive".into());
        }
        self.arl.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.oracle.lexicon.is_none() && self.oracle.endpoint.is_none() {
            return bad("oracle needs a lexicon or an endpoint".into());
        }
        let mut files = vec![&self.data.schema];
        if check_private {
            files.push(&self.data.private);
        }
        files.extend(self.data.vocabulary.iter());
        files.extend(self.data.reference.iter());
        files.extend(self.oracle.lexicon.iter());
        for f in files {
            if !f.is_file() {
                return bad(format!("missing input file {}", f.display()));
            }
        }
        Ok(())
    }
}
