//! Instruction-following control: the IFAcc reward, best-of-N anchor
//! curation and anchored reinforcement learning.
//!
//! Nothing here touches private data or a privacy ledger; prompts come from
//! a fitted feature generator and rewards from an extraction oracle.

mod anchor;
mod rl;

pub use anchor::{best_of_n, build_anchor_dataset, AnchorDataset, AnchorEntry, BestOfN};
pub use rl::{
    arl_train, gamma_schedule, rl_gradient, rl_train, rl_update, rollouts, write_log, ArlConfig, RewardedSample,
    RoundLog, TrainOutcome, UpdateStats,
};

use thiserror::Error;

use crate::gen::GenError;
use crate::schema::{FeatureRecord, Schema};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("feature does not match schema: {0}")]
    Schema(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("anchor dataset is empty but the anchor weight is positive")]
    EmptyAnchor,
    #[error("non-finite training signal in round {round}, epoch {epoch}: {detail}")]
    NonFinite { round: usize, epoch: usize, detail: String },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fraction of attributes on which the extracted record agrees with the
/// requested one. A failed extraction scores 0.
pub fn ifacc(schema: &Schema, f: &FeatureRecord, f_hat: Option<&FeatureRecord>) -> Result<f64, ControlError> {
    schema.validate(f).map_err(ControlError::Schema)?;
    let Some(h) = f_hat else { return Ok(0.0) };
    schema.validate(h).map_err(ControlError::Schema)?;
    let m = f.values.iter().zip(&h.values).filter(|(a, b)| a == b).count();
    Ok(m as f64 / schema.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema8() -> Schema {
        let opts = ["a", "b", "c"];
        let names: Vec<String> = (0..8).map(|i| format!("attr{i}")).collect();
        let pairs: Vec<(&str, &[&str])> = names.iter().map(|n| (n.as_str(), &opts[..])).collect();
        Schema::from_pairs("eight", &pairs).unwrap()
    }

    #[test]
    fn ifacc_values() {
        let s = schema8();
        let f = FeatureRecord::new(vec![0, 1, 2, 0, 1, 2, 0, 1]);
        assert_eq!(ifacc(&s, &f, Some(&f)).unwrap(), 1.0);
        let half = FeatureRecord::new(vec![0, 1, 2, 0, 0, 0, 1, 0]);
        assert_eq!(ifacc(&s, &f, Some(&half)).unwrap(), 0.5);
        assert_eq!(ifacc(&s, &f, None).unwrap(), 0.0);
        assert!(ifacc(&s, &FeatureRecord::new(vec![0; 3]), None).is_err());
        assert!(ifacc(&s, &f, Some(&FeatureRecord::new(vec![5; 8]))).is_err());
    }

    #[test]
    fn ifacc_is_invariant_to_consistent_reordering() {
        let s = schema8();
        let f = FeatureRecord::new(vec![0, 1, 2, 0, 1, 2, 0, 1]);
        let h = FeatureRecord::new(vec![0, 2, 2, 1, 1, 2, 0, 0]);
        let perm = [7, 3, 0, 5, 1, 6, 2, 4];
        let pf = FeatureRecord::new(perm.iter().map(|&i| f.values[i]).collect());
        let ph = FeatureRecord::new(perm.iter().map(|&i| h.values[i]).collect());
        assert_eq!(ifacc(&s, &f, Some(&h)).unwrap(), ifacc(&s, &pf, Some(&ph)).unwrap());
    }
}
