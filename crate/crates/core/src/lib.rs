//! Differentially private synthetic text through attribute-conditioned generation.
//!
//! The crate is organised along the stages of the synthesis procedure:
//!
//! * [`schema`]: tabular feature schemas, datasets and JSON/JSONL persistence.
//! * [`extraction`]: feature extraction (rule-based and HTTP oracles) and extraction error.
//! * [`accountant`]: Rényi-DP accounting for zCDP, Gaussian and subsampled Gaussian mechanisms.
//! * [`synth`]: DP feature generators (a workload-adaptive marginal synthesizer and a DP histogram).
//! * [`gen`]: the log-linear conditional token policy, DP-SGD training and nucleus decoding.
//! * [`control`]: instruction-following reward, best-of-N anchors and anchored RL.
//! * [`eval`]: Jensen-Shannon metrics, a MAUVE-style frontier score and length statistics.
//! * [`toy`]: the desk-scale corpus used by tests, benchmarks and the demo pipeline.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Results are
//! bitwise identical either way.

pub mod accountant;
pub mod control;
pub mod eval;
pub mod extraction;
pub mod gen;
pub mod json_float;
pub mod par;
pub mod rng;
pub mod schema;
pub mod synth;
pub mod toy;

pub use schema::{AttributeDistribution, AttributeSpec, FeatureRecord, Schema, TextRecord};
