#![allow(dead_code)]

use std::path::{Path, PathBuf};

use actg_core::control::ArlConfig;
use actg_core::toy::ToyConfig;
use actg_pipeline::config::{AnchorConfig, DpFtConfig, GenerateConfig};
use actg_pipeline::toy::{toy_run_config, write_toy_inputs, ToyInputs};
use actg_pipeline::RunConfig;

/// Toy inputs with `n` private texts and a 200-text reference corpus.
pub fn small_inputs(dir: &Path, n: usize) -> ToyInputs {
    write_toy_inputs(&dir.join("inputs"), &ToyConfig { n, seed: 1, ..Default::default() }, 200).unwrap()
}

/// The toy run config cut down to a few seconds of work.
pub fn small_config(inputs: &ToyInputs, out: impl Into<PathBuf>) -> RunConfig {
    let mut cfg = toy_run_config(inputs, out);
    cfg.stage1.fit_iters = 40;
    cfg.dpsgd = DpFtConfig { clip: 12.0, q: 0.1, steps: 40, lr: 0.5 };
    cfg.anchor = AnchorConfig { n: 2, prompts: 24, ..Default::default() };
    cfg.arl = ArlConfig { buffer: 32, epochs: 1, rounds: 2, lr: 5.0, kl_coef: 0.02, ..Default::default() };
    cfg.generate = GenerateConfig { n_syn: 120, ..Default::default() };
    cfg.eval.clusters = Some(8);
    cfg
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}
