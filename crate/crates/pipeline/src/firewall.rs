//! Runtime half of the privacy firewall.
//!
//! Every file the pipeline reads goes through [`Firewall::open`]. Paths that
//! hold private records are registered up front; once the ledger is sealed
//! the firewall refuses them.

use std::path::{Path, PathBuf};

use crate::PipelineError;

#[derive(Debug, Default)]
pub struct Firewall {
    private: Vec<PathBuf>,
    sealed: bool,
}

fn lexical(path: &Path) -> PathBuf {
    let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    abs.components().collect()
}

/// Lexical and (when the file exists) canonical forms.
fn forms(path: &Path) -> Vec<PathBuf> {
    let mut out = vec![lexical(path)];
    out.extend(std::fs::canonicalize(path).ok());
    out
}

impl Firewall {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, path: impl AsRef<Path>) {
        self.private.extend(forms(path.as_ref()));
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn is_private(&self, path: &Path) -> bool {
        forms(path).iter().any(|p| self.private.contains(p))
    }

    /// Fails for private paths after sealing.
    pub fn check(&self, path: &Path) -> Result<(), PipelineError> {
        if self.sealed && self.is_private(path) {
            return Err(PipelineError::Firewall(format!("{} is private and the ledger is sealed", path.display())));
        }
        Ok(())
    }

    pub fn open(&self, path: &Path) -> Result<PathBuf, PipelineError> {
        self.check(path)?;
        if !path.exists() {
            return Err(PipelineError::MissingArtifact(path.to_path_buf()));
        }
        Ok(path.to_path_buf())
    }

    pub fn read_to_string(&self, path: &Path) -> Result<String, PipelineError> {
        let p = self.open(path)?;
        std::fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))
    }
}
