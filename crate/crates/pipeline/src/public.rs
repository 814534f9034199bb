//! Steps 3 to 5 and evaluation. Inputs are the sealed ledger, the fitted
//! feature generator, the fine-tuned policy and public files only; every
//! entry point refuses to run before the firewall is sealed.

use std::collections::BTreeMap;
use std::path::Path;

use actg_core::control::{arl_train, build_anchor_dataset, rl_train, write_log, AnchorDataset};
use actg_core::eval::{
    attribute_jsd, dataset_ifacc, length_stats, mauve_lite, HashedBow, MauveConfig, MetricReport,
};
use actg_core::extraction::{annotate_dataset, AnnotateConfig, Oracle};
use actg_core::gen::{sample_batch, TokenPolicy};
use actg_core::schema::{load_jsonl, save_features_jsonl, save_jsonl, FeatureRecord, Schema, TextRecord};
use actg_core::synth::FeatureSampler;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::firewall::Firewall;
use crate::inputs::FeatureModel;
use crate::rundir::{RunDir, ANCHOR, CONTROL_LOG, METRICS_CSV, POLICY_FINAL, REPORT, SYNTHETIC_FEATURES, SYNTHETIC_TEXTS};
use crate::PipelineError;

/// Tolerance for the per-attribute triangle check on JS distances.
const TRIANGLE_SLACK: f64 = 1e-12;

fn require_sealed(fw: &Firewall) -> Result<(), PipelineError> {
    if fw.is_sealed() {
        Ok(())
    } else {
        Err(PipelineError::Firewall("steps 3-5 need a sealed ledger".into()))
    }
}

fn load_policy(path: &Path, fw: &Firewall) -> Result<TokenPolicy, PipelineError> {
    TokenPolicy::load(fw.open(path)?).map_err(|e| PipelineError::stage("policy", e))
}

/// Step 3: best-of-`N` anchor texts for prompts from the feature generator.
pub fn build_anchor(
    cfg: &RunConfig,
    out: &RunDir,
    fw: &Firewall,
    schema: &Schema,
    oracle: &dyn Oracle,
    sampler: &FeatureModel,
    policy_path: &Path,
) -> Result<AnchorDataset, PipelineError> {
    require_sealed(fw)?;
    let policy = load_policy(policy_path, fw)?;
    let a = &cfg.anchor;
    let anchor = build_anchor_dataset(sampler, &policy, oracle, schema, a.n, a.prompts, &a.decoding, cfg.stage_seed("anchor"))
        .map_err(|e| PipelineError::stage("anchor", e))?;
    anchor.save(out.artifact(ANCHOR)).map_err(|e| PipelineError::stage("anchor", e))?;
    Ok(anchor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Control {
    /// Keep the fine-tuned policy.
    None,
    Rl,
    Arl,
}

/// Step 4: reward optimisation of the fine-tuned policy, which also serves
/// as the KL reference. Writes the final policy to `out`.
#[allow(clippy::too_many_arguments)]
pub fn control(
    cfg: &RunConfig,
    out: &RunDir,
    fw: &Firewall,
    schema: &Schema,
    oracle: &dyn Oracle,
    sampler: &FeatureModel,
    policy_path: &Path,
    anchor_path: &Path,
    mode: Control,
) -> Result<TokenPolicy, PipelineError> {
    require_sealed(fw)?;
    let init = load_policy(policy_path, fw)?;
    let arl = actg_core::control::ArlConfig { seed: cfg.stage_seed("arl"), ..cfg.arl };
    let stage = |e: actg_core::control::ControlError| PipelineError::stage("control", e);
    let trained = match mode {
        Control::None => None,
        Control::Rl => Some(rl_train(&init, &init, sampler, oracle, schema, &arl).map_err(stage)?),
        Control::Arl => {
            let anchor = AnchorDataset::load(fw.open(anchor_path)?).map_err(stage)?;
            Some(arl_train(&init, &init, sampler, &anchor, oracle, schema, &arl).map_err(stage)?)
        }
    };
    let policy = match trained {
        Some(t) => {
            write_log(out.metric(CONTROL_LOG), &t.log).map_err(stage)?;
            t.policy
        }
        None => init,
    };
    policy.save(out.artifact(POLICY_FINAL)).map_err(|e| PipelineError::stage("control", e))?;
    Ok(policy)
}

/// Step 5: synthetic features from the feature generator and one text per
/// feature from the final policy.
pub fn generate(
    cfg: &RunConfig,
    out: &RunDir,
    fw: &Firewall,
    schema: &Schema,
    sampler: &FeatureModel,
    policy_path: &Path,
) -> Result<Vec<TextRecord>, PipelineError> {
    require_sealed(fw)?;
    let policy = load_policy(policy_path, fw)?;
    let g = &cfg.generate;
    let features = sampler.sample(g.n_syn, cfg.stage_seed("generate/features"));
    let seqs = sample_batch(&policy, &features, &g.decoding, cfg.stage_seed("generate/texts"));
    let texts: Vec<TextRecord> =
        seqs.iter().zip(&features).map(|(s, f)| policy.vocab().decode(s).with_features(f.clone())).collect();
    let stage = |e: actg_core::schema::SchemaError| PipelineError::stage("generate", e);
    save_features_jsonl(out.artifact(SYNTHETIC_FEATURES), &features, schema).map_err(stage)?;
    save_jsonl(out.artifact(SYNTHETIC_TEXTS), &texts, schema).map_err(stage)?;
    Ok(texts)
}

/// Public evaluation corpus with oracle features.
#[derive(Debug, Clone)]
pub struct Reference {
    pub texts: Vec<String>,
    pub features: Vec<FeatureRecord>,
    pub median_length: f64,
}

pub fn load_reference(
    cfg: &RunConfig,
    fw: &Firewall,
    schema: &Schema,
    oracle: &dyn Oracle,
) -> Result<Option<Reference>, PipelineError> {
    require_sealed(fw)?;
    let Some(path) = &cfg.data.reference else { return Ok(None) };
    let records = load_jsonl(fw.open(path)?, schema).map_err(|e| PipelineError::stage("reference", e))?;
    if records.is_empty() {
        return Err(PipelineError::stage("reference", "empty reference corpus"));
    }
    let ac = AnnotateConfig { retries: cfg.oracle.retries, parallelism: cfg.oracle.parallelism, ..Default::default() };
    let features = annotate_dataset(oracle, &records, schema, &ac).features();
    let lengths: Vec<usize> = records.iter().map(|r| r.tokens.len()).collect();
    let median_length = length_stats(&lengths, None).map_err(|e| PipelineError::stage("reference", e))?.median;
    Ok(Some(Reference { texts: records.into_iter().map(|r| r.text).collect(), features, median_length }))
}

/// Scores the synthetic set in `out`: IFAcc, the JS decomposition, MAUVE
/// against the reference corpus and length statistics. Writes
/// `metrics/report.json` and a one-row `metrics/metrics.csv`.
pub fn evaluate(
    cfg: &RunConfig,
    out: &RunDir,
    fw: &Firewall,
    schema: &Schema,
    oracle: &dyn Oracle,
    reference: Option<&Reference>,
) -> Result<MetricReport, PipelineError> {
    require_sealed(fw)?;
    let stage = |e: actg_core::eval::EvalError| PipelineError::stage("evaluate", e);
    let texts = load_jsonl(fw.open(&out.artifact(SYNTHETIC_TEXTS))?, schema)
        .map_err(|e| PipelineError::stage("evaluate", e))?;
    let pairs: Vec<(FeatureRecord, TextRecord)> = texts
        .iter()
        .map(|t| t.features.clone().map(|f| (f, t.clone())))
        .collect::<Option<_>>()
        .ok_or_else(|| PipelineError::stage("evaluate", "synthetic texts lack their input features"))?;
    let inputs: Vec<FeatureRecord> = pairs.iter().map(|p| p.0.clone()).collect();
    let mut report = MetricReport::new();
    let set = |r: &mut MetricReport, k: &str, v: f64| r.set(k, v).map_err(stage);

    let ifacc = dataset_ifacc(&pairs, oracle, schema).map_err(stage)?;
    set(&mut report, "ifacc", ifacc.mean)?;
    set(&mut report, "extraction_failures", ifacc.failures as f64)?;
    report.set_breakdown("ifacc", schema, &ifacc.per_attribute);

    let plain: Vec<TextRecord> = texts.iter().map(|t| TextRecord::new(t.text.clone())).collect();
    let ac = AnnotateConfig { retries: cfg.oracle.retries, parallelism: cfg.oracle.parallelism, ..Default::default() };
    let extracted = annotate_dataset(oracle, &plain, schema, &ac).features();

    let lengths: Vec<usize> = texts.iter().map(|t| t.tokens.len()).collect();
    let ls = length_stats(&lengths, reference.map(|r| r.median_length)).map_err(stage)?;
    set(&mut report, "length_median", ls.median)?;
    set(&mut report, "length_mean", ls.mean)?;
    set(&mut report, "length_p10", ls.p10)?;
    set(&mut report, "collapse_fraction", ls.collapse_fraction)?;
    set(&mut report, "n_syn", texts.len() as f64)?;

    if !extracted.is_empty() {
        let f2 = attribute_jsd(schema, &inputs, &extracted).map_err(stage)?;
        set(&mut report, "djs_f2", f2.mean)?;
        report.set_breakdown("djs_f2", schema, &f2.per_attribute);
        if let Some(r) = reference.filter(|r| !r.features.is_empty()) {
            let f = attribute_jsd(schema, &r.features, &extracted).map_err(stage)?;
            let f1 = attribute_jsd(schema, &r.features, &inputs).map_err(stage)?;
            for (k, ((a, b), c)) in f.per_attribute.iter().zip(&f1.per_attribute).zip(&f2.per_attribute).enumerate() {
                if *a > b + c + TRIANGLE_SLACK {
                    return Err(PipelineError::stage(
                        "evaluate",
                        format!("triangle check failed on attribute {k}: {a} > {b} + {c}"),
                    ));
                }
            }
            set(&mut report, "djs_f", f.mean)?;
            set(&mut report, "djs_f1", f1.mean)?;
            report.set_breakdown("djs_f", schema, &f.per_attribute);
            report.set_breakdown("djs_f1", schema, &f1.per_attribute);
        }
    }
    if let Some(r) = reference {
        let syn: Vec<String> = texts.iter().map(|t| t.text.clone()).collect();
        let mc = MauveConfig {
            clusters: cfg.eval.clusters,
            scaling: cfg.eval.scaling,
            max_iter: cfg.eval.max_iter,
            seed: cfg.stage_seed("evaluate"),
        };
        let m = mauve_lite(&r.texts, &syn, &HashedBow::default(), &mc).map_err(stage)?;
        set(&mut report, "mauve", m.score)?;
        report.meta("clusters", m.clusters);
    }
    report.meta("config_hash", cfg.hash());
    report.meta("seed", cfg.seed);
    write_report(out, &report)?;
    Ok(report)
}

fn write_report(out: &RunDir, report: &MetricReport) -> Result<(), PipelineError> {
    let path = out.metric(REPORT);
    std::fs::write(&path, report.to_json()).map_err(|e| PipelineError::io(&path, e))?;
    let csv = format!("{}\n{}\n", report.csv_header().join(","), report.csv_row().join(","));
    let path = out.metric(METRICS_CSV);
    std::fs::write(&path, csv).map_err(|e| PipelineError::io(&path, e))
}

/// One CSV with a row per variant over the union of metric names.
pub fn comparison_csv(rows: &[(String, MetricReport)]) -> String {
    let mut names: BTreeMap<&str, ()> = BTreeMap::new();
    for (_, r) in rows {
        for k in r.scalars.keys() {
            names.insert(k, ());
        }
    }
    let mut out = String::from("variant");
    for k in names.keys() {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for (v, r) in rows {
        out.push_str(v);
        for k in names.keys() {
            out.push(',');
            if let Some(x) = r.get(k) {
                out.push_str(&format!("{x}"));
            }
        }
        out.push('\n');
    }
    out
}
