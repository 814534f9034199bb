//! Steps 1 and 2: annotation, the feature generator and DP fine-tuning of
//! the conditional generator. These are the only functions that read the
//! private corpus; the last of them seals the ledger.

use std::io::Write;
use std::path::Path;

use actg_core::extraction::{annotate_dataset, AnnotateConfig, Oracle};
use actg_core::gen::{train_dpft, DpSgdConfig, TokenPolicy, Vocab};
use actg_core::schema::{load_features_jsonl, load_jsonl, save_jsonl, Schema, TextRecord};
use actg_core::synth::{aim_fit, fit_feature_histogram, AimConfig};

use crate::config::{RunConfig, Stage1Method};
use crate::firewall::Firewall;
use crate::inputs::{feature_model_path, write_json};
use crate::ledger::Ledger;
use crate::rundir::{RunDir, ANNOTATED, ANNOTATION_FAILURES, DPFT_LOG, POLICY_DPFT};
use crate::PipelineError;

/// Marks every path holding private records.
pub fn register_private(cfg: &RunConfig, dir: &RunDir, fw: &mut Firewall) {
    fw.register(&cfg.data.private);
    fw.register(dir.artifact(ANNOTATED));
}

/// Step 1: extracts features from every private text. Returns the number of
/// annotated records.
pub fn annotate(
    cfg: &RunConfig,
    dir: &RunDir,
    fw: &Firewall,
    schema: &Schema,
    oracle: &dyn Oracle,
) -> Result<usize, PipelineError> {
    let source = fw.open(&cfg.data.private)?;
    let texts = load_jsonl(&source, schema).map_err(|e| PipelineError::stage("annotate", e))?;
    let ac = AnnotateConfig { retries: cfg.oracle.retries, parallelism: cfg.oracle.parallelism, ..Default::default() };
    let annotated = annotate_dataset(oracle, &texts, schema, &ac);
    if annotated.pairs.is_empty() {
        return Err(PipelineError::stage("annotate", "no text could be annotated"));
    }
    let out = dir.artifact(ANNOTATED);
    save_jsonl(&out, &annotated.pairs, schema).map_err(|e| PipelineError::stage("annotate", e))?;
    write_json(&dir.artifact(ANNOTATION_FAILURES), &annotated.failures)?;
    Ok(annotated.pairs.len())
}

/// Step 2a: fits the feature generator and charges it to the ledger at
/// `ledger_path`, which is opened if absent.
pub fn fit_feature_generator(
    cfg: &RunConfig,
    dir: &RunDir,
    fw: &Firewall,
    schema: &Schema,
    method: Stage1Method,
    ledger_path: &Path,
) -> Result<(), PipelineError> {
    let features = load_features_jsonl(fw.open(&dir.artifact(ANNOTATED))?, schema)
        .map_err(|e| PipelineError::stage("feature generator", e))?;
    let mut ledger = if ledger_path.exists() { Ledger::load(ledger_path)? } else { Ledger::open(cfg, features.len())? };
    if ledger.is_sealed() {
        return Err(PipelineError::Ledger("sealed; the feature generator can no longer be refit".into()));
    }
    let rho = ledger.allocation.rho;
    let seed = cfg.stage_seed("stage1");
    let path = feature_model_path(dir, method);
    let stage = |e: actg_core::synth::SynthError| PipelineError::stage("feature generator", e);
    let label = match method {
        Stage1Method::Aim => {
            let ac = AimConfig { rho, rounds: cfg.stage1.rounds, fit_iters: cfg.stage1.fit_iters, seed };
            aim_fit(&features, schema, &ac).map_err(stage)?.save(&path).map_err(stage)?;
            "stage1-aim"
        }
        Stage1Method::Histogram => {
            // Unit L2 sensitivity: a Gaussian histogram with σ is (1/2σ²)-zCDP.
            let sigma = if ledger.allocation.is_noiseless() { 0.0 } else { (0.5 / rho).sqrt() };
            fit_feature_histogram(&features, schema, sigma, cfg.stage1.threshold, seed)
                .map_err(stage)?
                .save(&path)
                .map_err(stage)?;
            "stage1-histogram"
        }
    };
    ledger.charge(ledger.stage1_mechanism(label))?;
    ledger.save(ledger_path)
}

fn vocabulary(cfg: &RunConfig, fw: &Firewall, texts: &[TextRecord]) -> Result<(Vocab, bool), PipelineError> {
    let stage = |e: actg_core::gen::GenError| PipelineError::stage("vocabulary", e);
    match &cfg.data.vocabulary {
        Some(path) => {
            let raw = fw.read_to_string(path)?;
            let tokens: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            Ok((Vocab::new(&tokens).map_err(stage)?, true))
        }
        None => Ok((Vocab::from_texts(texts).map_err(stage)?, false)),
    }
}

/// Step 2b: DP fine-tuning. Charges and seals every ledger in
/// `ledger_paths`; each must already hold its feature-generator entry.
pub fn train_generator(
    cfg: &RunConfig,
    dir: &RunDir,
    fw: &Firewall,
    schema: &Schema,
    ledger_paths: &[&Path],
) -> Result<(), PipelineError> {
    let mut ledgers = ledger_paths.iter().map(|p| Ledger::load(p)).collect::<Result<Vec<_>, _>>()?;
    if ledgers.iter().any(|l| l.is_sealed() || l.spend.ledger.is_empty()) {
        return Err(PipelineError::Ledger("fine-tuning needs an open ledger with the feature generator charged".into()));
    }
    let texts = load_jsonl(fw.open(&dir.artifact(ANNOTATED))?, schema).map_err(|e| PipelineError::stage("dp-ft", e))?;
    let (vocab, public_vocab) = vocabulary(cfg, fw, &texts)?;
    // Out-of-vocabulary tokens are dropped record by record.
    let data: Vec<_> = texts
        .iter()
        .filter_map(|t| {
            let kept: Vec<String> = t.tokens.iter().filter(|w| vocab.id(w).is_some()).cloned().collect();
            let ids = vocab.encode(&TextRecord::from_tokens(kept)).ok()?;
            Some((t.features.clone()?, ids))
        })
        .collect();
    let allocation = ledgers[0].allocation;
    let dp = DpSgdConfig {
        clip: cfg.dpsgd.clip,
        sigma: allocation.sigma,
        q: cfg.dpsgd.q,
        steps: cfg.dpsgd.steps,
        lr: cfg.dpsgd.lr,
        seed: cfg.stage_seed("dpsgd"),
    };
    let log_path = dir.metric(DPFT_LOG);
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| PipelineError::io(&log_path, e))?);
    let io = |e| PipelineError::io(&log_path, e);
    writeln!(log, "step,batch_size,mean_raw_norm,max_clipped_norm").map_err(io)?;
    let mut write_err = None;
    let trained = train_dpft(TokenPolicy::new(vocab, schema), &data, &dp, ledgers[0].spend.delta, |step, _, s| {
        if let Err(e) = writeln!(log, "{step},{},{},{}", s.batch_size, s.mean_raw_norm, s.max_clipped_norm) {
            write_err.get_or_insert(e);
        }
    })
    .map_err(|e| PipelineError::stage("dp-ft", e))?;
    if let Some(e) = write_err {
        return Err(io(e));
    }
    log.flush().map_err(io)?;
    let out = dir.artifact(POLICY_DPFT);
    trained.policy.save(&out).map_err(|e| PipelineError::stage("dp-ft", e))?;
    for (ledger, path) in ledgers.iter_mut().zip(ledger_paths) {
        ledger.charge(trained.mechanism.clone())?;
        if !public_vocab {
            ledger.notes.push("vocabulary was read off the private corpus and is not covered by the guarantee".into());
        }
        ledger.seal();
        ledger.save(path)?;
    }
    Ok(())
}
