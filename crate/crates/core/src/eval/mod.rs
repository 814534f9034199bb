//! Evaluation metrics: Jensen-Shannon distances over attribute
//! distributions, a MAUVE-style divergence-frontier score, instruction
//! following accuracy over datasets and length statistics.

mod embed;
mod js;
mod kmeans;
mod mauve;
mod report;

pub use embed::{Embedder, HashedBow};
pub use js::{attribute_jsd, js_distance, AttributeJsd};
pub use kmeans::{kmeans, KMeansResult};
pub use mauve::{mauve_lite, MauveConfig, MauveResult};
pub use report::{dataset_ifacc, length_stats, IfaccReport, LengthStats, MetricReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("corpus of {size} texts is smaller than the cluster count {k}; use fewer clusters")]
    TooFewTexts { size: usize, k: usize },
    #[error("metric '{0}' is not finite")]
    NonFinite(String),
    #[error(transparent)]
    Schema(#[from] crate::schema::SchemaError),
}
