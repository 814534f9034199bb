//! Conditional text generator: a log-linear bigram policy whose logits are
//! shifted by per-attribute conditioning tables, trained with DP-SGD and
//! decoded with temperature, top-k and nucleus filtering.

mod decode;
mod dpsgd;
mod policy;
mod vocab;

pub use decode::{nucleus, sample_batch, sample_text, sample_tokens, DecodingConfig};
pub use dpsgd::{clip_scale, dp_sgd_step, poisson_batch, sgd_step, train_dpft, DpSgdConfig, StepStats, TrainedPolicy};
pub use policy::{log_softmax, softmax, Gradient, TokenPolicy};
pub use vocab::{Vocab, BOS, EOS};

use thiserror::Error;

use crate::accountant::AccountantError;
use crate::schema::SchemaError;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("token '{0}' is not in the vocabulary")]
    UnknownToken(String),
    #[error("token id {0} is out of range")]
    TokenId(u32),
    #[error("vocabulary needs at least 4 tokens, got {0}")]
    VocabTooSmall(usize),
    #[error("duplicate token '{0}'")]
    DuplicateToken(String),
    #[error("feature does not fit the policy schema: {0}")]
    Feature(String),
    #[error("policy was built for schema {expected}, got {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty training set")]
    NoData,
    #[error("policy file: {0}")]
    Format(String),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
