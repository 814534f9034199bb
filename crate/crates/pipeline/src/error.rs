use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("privacy firewall: {0}")]
    Firewall(String),
    #[error("ledger: {0}")]
    Ledger(String),
    #[error("missing artifact {0}; run the earlier steps first")]
    MissingArtifact(PathBuf),
    #[error("stage {stage}: {reason}")]
    Stage { stage: &'static str, reason: String },
    #[error(transparent)]
    Accountant(#[from] actg_core::accountant::AccountantError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        Self::Stage { stage, reason: err.to_string() }
    }
}
