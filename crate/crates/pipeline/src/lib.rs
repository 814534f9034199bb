//! Orchestration for attribute-conditioned DP text synthesis: run
//! configuration, the privacy ledger and firewall, the run directory and
//! the end-to-end and ablation drivers behind the `actg` binary.
//!
//! A run has a private phase (annotation, feature generator, DP
//! fine-tuning) that ends by sealing the ledger, and a public phase
//! (best-of-N anchor, reward optimisation, generation, evaluation) that
//! works from artifacts only. The two phases live in separate modules,
//! [`private`] and [`public`]; the firewall refuses private paths once the
//! ledger is sealed.

pub mod config;
mod error;
pub mod firewall;
pub mod inputs;
pub mod ledger;
pub mod private;
pub mod public;
pub mod run;
pub mod rundir;
pub mod toy;

pub use config::{RunConfig, Stage1Method};
pub use error::PipelineError;
pub use ledger::Ledger;
pub use run::{run_ablation, run_ablation_with, run_actg_arl, run_actg_arl_with, Options, RunArtifacts, Step, Variant};
