//! Loaders shared by both phases. Every read goes through the firewall.

use std::path::{Path, PathBuf};
use std::time::Duration;

use actg_core::extraction::{HttpOracle, Lexicon, Oracle};
use actg_core::schema::{FeatureRecord, Schema};
use actg_core::synth::{FeatureHistogram, FeatureSampler, MarginalModel};

use crate::config::{RunConfig, Stage1Method};
use crate::firewall::Firewall;
use crate::rundir::RunDir;
use crate::PipelineError;

pub fn load_schema(cfg: &RunConfig, fw: &Firewall) -> Result<Schema, PipelineError> {
    Schema::load(fw.open(&cfg.data.schema)?).map_err(|e| PipelineError::stage("schema", e))
}

pub fn load_oracle(cfg: &RunConfig, schema: &Schema, fw: &Firewall) -> Result<Box<dyn Oracle>, PipelineError> {
    if let Some(path) = &cfg.oracle.lexicon {
        let doc = fw.read_to_string(path)?;
        let lx = Lexicon::parse(&doc, schema).map_err(|e| PipelineError::stage("oracle", e))?;
        return Ok(Box::new(lx));
    }
    match &cfg.oracle.endpoint {
        Some(url) => Ok(Box::new(HttpOracle::new(url.clone(), Duration::from_millis(cfg.oracle.timeout_ms)))),
        None => Err(PipelineError::Config("oracle needs a lexicon or an endpoint".into())),
    }
}

/// A fitted feature generator.
#[derive(Debug, Clone)]
pub enum FeatureModel {
    Aim(MarginalModel),
    Histogram(FeatureHistogram),
}

impl FeatureSampler for FeatureModel {
    fn sample(&self, n: usize, seed: u64) -> Vec<FeatureRecord> {
        match self {
            FeatureModel::Aim(m) => m.sample(n, seed),
            FeatureModel::Histogram(h) => h.sample(n, seed),
        }
    }
}

pub fn feature_model_path(dir: &RunDir, method: Stage1Method) -> PathBuf {
    dir.artifact(match method {
        Stage1Method::Aim => "stage1_aim.json",
        Stage1Method::Histogram => "stage1_histogram.json",
    })
}

pub fn load_feature_model(path: &Path, method: Stage1Method, fw: &Firewall) -> Result<FeatureModel, PipelineError> {
    let path = fw.open(path)?;
    let stage = |e: actg_core::synth::SynthError| PipelineError::stage("feature model", e);
    Ok(match method {
        Stage1Method::Aim => FeatureModel::Aim(MarginalModel::load(&path).map_err(stage)?),
        Stage1Method::Histogram => FeatureModel::Histogram(FeatureHistogram::load(&path).map_err(stage)?),
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| PipelineError::stage("serialize", e))?;
    std::fs::write(path, json).map_err(|e| PipelineError::io(path, e))
}
