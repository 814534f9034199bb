//! Run directory layout:
//!
//! ```text
//! <out>/
//!   config.json
//!   ledger.json
//!   failure.json            (only after a failed step)
//!   artifacts/              models, anchor set, synthetic data, manifest.json
//!   metrics/                report.json, metrics.csv, training logs
//!   variants/<name>/        per-variant artifacts/ and metrics/ of an ablation
//! ```

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use crate::PipelineError;

pub const ANNOTATED: &str = "annotated.jsonl";
pub const ANNOTATION_FAILURES: &str = "annotation_failures.json";
pub const POLICY_DPFT: &str = "policy_dpft.json";
pub const ANCHOR: &str = "anchor.json";
pub const POLICY_FINAL: &str = "policy_final.json";
pub const SYNTHETIC_FEATURES: &str = "synthetic_features.jsonl";
pub const SYNTHETIC_TEXTS: &str = "synthetic_texts.jsonl";
pub const MANIFEST: &str = "manifest.json";

pub const DPFT_LOG: &str = "dpft_steps.csv";
pub const CONTROL_LOG: &str = "control_log.csv";
pub const REPORT: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self) -> Result<(), PipelineError> {
        for d in [self.root.join("artifacts"), self.root.join("metrics")] {
            std::fs::create_dir_all(&d).map_err(|e| PipelineError::io(&d, e))?;
        }
        Ok(())
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join("ledger.json")
    }

    pub fn failure(&self) -> PathBuf {
        self.root.join("failure.json")
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.root.join("artifacts").join(name)
    }

    pub fn metric(&self, name: &str) -> PathBuf {
        self.root.join("metrics").join(name)
    }

    pub fn sub(&self, name: &str) -> RunDir {
        RunDir::new(self.root.join("variants").join(name))
    }

    /// Takes the run lock; released when the guard drops.
    pub fn lock(&self) -> Result<LockGuard, PipelineError> {
        std::fs::create_dir_all(&self.root).map_err(|e| PipelineError::io(&self.root, e))?;
        let path = self.root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(self.root.clone())),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }
}

#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path().join("r"));
        let g = run.lock().unwrap();
        assert!(matches!(run.lock(), Err(PipelineError::Locked(_))));
        drop(g);
        let _again = run.lock().unwrap();
    }

    #[test]
    fn layout() {
        let run = RunDir::new("/x");
        assert_eq!(run.artifact(ANCHOR), PathBuf::from("/x/artifacts/anchor.json"));
        assert_eq!(run.sub("actg").metric(REPORT), PathBuf::from("/x/variants/actg/metrics/report.json"));
    }
}
