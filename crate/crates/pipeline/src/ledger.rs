//! On-disk privacy ledger of one run.

use std::path::Path;

use actg_core::accountant::{split_budget, BudgetSplit, Mechanism, MechanismSpec, PrivacySpend};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::PipelineError;

/// Noise-free stand-in for the feature generator's zCDP budget when `ε = ∞`.
pub const NOISELESS_RHO: f64 = 1e6;

/// Budget allocation for the two private stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub rho: f64,
    pub sigma: f64,
    pub split: Option<BudgetSplit>,
}

impl Allocation {
    pub fn is_noiseless(&self) -> bool {
        self.split.is_none()
    }
}

pub fn kind_name(m: &Mechanism) -> &'static str {
    match m {
        Mechanism::Gaussian { .. } => "gaussian",
        Mechanism::SubsampledGaussian { .. } => "subsampled_gaussian",
        Mechanism::Zcdp { .. } => "zcdp",
        Mechanism::NonPrivate => "non_private",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    #[serde(with = "actg_core::json_float")]
    pub budget: f64,
    pub delta_source: String,
    pub n_private: usize,
    pub allocation: Allocation,
    pub spend: PrivacySpend,
    pub config_hash: String,
    pub seed: u64,
    pub notes: Vec<String>,
}

impl Ledger {
    /// Opens a ledger for `n_private` annotated records and allocates the budget.
    pub fn open(cfg: &RunConfig, n_private: usize) -> Result<Self, PipelineError> {
        let (delta, delta_source) = match cfg.privacy.delta {
            Some(d) => (d, "override".to_string()),
            None => (actg_core::accountant::delta_rule(n_private as u64)?, "rule".to_string()),
        };
        let eps = cfg.privacy.epsilon;
        let allocation = if eps.is_infinite() {
            Allocation { rho: NOISELESS_RHO, sigma: 0.0, split: None }
        } else {
            let s = split_budget(eps, delta, cfg.privacy.split, cfg.dpsgd.q, cfg.dpsgd.steps)?;
            Allocation { rho: s.rho, sigma: s.sigma, split: Some(s) }
        };
        Ok(Self {
            budget: eps,
            delta_source,
            n_private,
            allocation,
            spend: PrivacySpend::new(delta)?,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            notes: Vec::new(),
        })
    }

    /// Mechanism charged for the feature generator.
    pub fn stage1_mechanism(&self, label: &str) -> MechanismSpec {
        if self.allocation.is_noiseless() {
            MechanismSpec::non_private().labelled(label)
        } else {
            MechanismSpec::zcdp(self.allocation.rho).labelled(label)
        }
    }

    pub fn charge(&mut self, spec: MechanismSpec) -> Result<(), PipelineError> {
        self.spend.charge(spec).map_err(|e| PipelineError::Ledger(e.to_string()))
    }

    pub fn seal(&mut self) {
        self.spend.seal();
    }

    pub fn is_sealed(&self) -> bool {
        self.spend.sealed
    }

    pub fn epsilon(&self) -> f64 {
        self.spend.epsilon
    }

    /// True when the composed guarantee fits the configured budget. The
    /// noiseless sentinel only fits an infinite budget.
    pub fn within_budget(&self) -> bool {
        self.spend.within(self.budget)
    }

    /// Number of charged entries of one kind: `zcdp`, `subsampled_gaussian`,
    /// `gaussian` or `non_private`.
    pub fn count(&self, kind: &str) -> usize {
        self.spend.ledger.iter().filter(|m| kind_name(&m.mechanism) == kind).count()
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self).expect("ledger serializes");
        std::fs::write(path, json).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingArtifact(path.to_path_buf()));
        }
        let raw = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| PipelineError::Ledger(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use actg_core::accountant::{compose, rdp_to_dp};

    fn cfg(eps: f64) -> RunConfig {
        let mut c = RunConfig::new("p", "s", "o");
        c.privacy.epsilon = eps;
        c
    }

    #[test]
    fn finite_budget_composes_exactly_the_charged_mechanisms() {
        let c = cfg(4.0);
        let mut l = Ledger::open(&c, 10_000).unwrap();
        l.charge(l.stage1_mechanism("stage1")).unwrap();
        l.charge(MechanismSpec::subsampled_gaussian(l.allocation.sigma, c.dpsgd.q, c.dpsgd.steps)).unwrap();
        l.seal();
        assert!(l.within_budget());
        assert_eq!(l.count("zcdp"), 1);
        assert_eq!(l.count("subsampled_gaussian"), 1);
        let independent = rdp_to_dp(&compose(&l.spend.ledger).unwrap(), l.spend.delta).unwrap().epsilon;
        assert!((independent - l.epsilon()).abs() < 1e-12);
        assert!(l.charge(MechanismSpec::zcdp(1.0)).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        l.save(&path).unwrap();
        assert_eq!(Ledger::load(&path).unwrap(), l);
    }

    #[test]
    fn infinite_budget_records_sentinel() {
        let c = cfg(f64::INFINITY);
        let mut l = Ledger::open(&c, 10_000).unwrap();
        assert!(l.allocation.is_noiseless());
        l.charge(l.stage1_mechanism("stage1")).unwrap();
        assert!(l.spend.non_private);
        assert!(l.epsilon().is_infinite());
        assert!(l.within_budget());
        assert!(!Ledger { budget: 4.0, ..l }.within_budget());
    }
}
