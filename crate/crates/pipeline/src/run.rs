//! End-to-end orchestration: annotate, fit the feature generator, DP
//! fine-tune, seal, then best-of-N anchor, reward optimisation, generation
//! and evaluation.

use std::path::PathBuf;

use actg_core::eval::MetricReport;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Stage1Method};
use crate::firewall::Firewall;
use crate::inputs::{feature_model_path, load_feature_model, load_oracle, load_schema, write_json};
use crate::ledger::Ledger;
use crate::public::{self, Control};
use crate::rundir::{self, RunDir};
use crate::{private, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Actg,
    ActgRl,
    ActgArl,
    HistogramS1,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Actg => "actg",
            Variant::ActgRl => "actg-rl",
            Variant::ActgArl => "actg-arl",
            Variant::HistogramS1 => "histogram-s1",
        }
    }

    fn control(self) -> Control {
        match self {
            Variant::Actg | Variant::HistogramS1 => Control::None,
            Variant::ActgRl => Control::Rl,
            Variant::ActgArl => Control::Arl,
        }
    }
}

/// Checkpoints reported to the step hook, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    Annotate,
    FeatureGenerator,
    ConditionalGenerator,
    /// The ledger is sealed and private inputs are closed.
    Sealed,
    Anchor,
    Control,
    Generate,
    Evaluate,
}

impl Step {
    fn name(self) -> &'static str {
        match self {
            Step::Annotate => "annotate",
            Step::FeatureGenerator => "feature-generator",
            Step::ConditionalGenerator => "conditional-generator",
            Step::Sealed => "sealed",
            Step::Anchor => "anchor",
            Step::Control => "control",
            Step::Generate => "generate",
            Step::Evaluate => "evaluate",
        }
    }
}

/// Paths produced by a run, stamped with the config hash and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub root: PathBuf,
    pub config: PathBuf,
    pub ledger: PathBuf,
    pub annotated: PathBuf,
    pub feature_model: PathBuf,
    pub policy_dpft: PathBuf,
    pub anchor: Option<PathBuf>,
    pub policy_final: PathBuf,
    pub synthetic_features: PathBuf,
    pub synthetic_texts: PathBuf,
    pub report: PathBuf,
    pub metrics_csv: PathBuf,
    pub config_hash: String,
    pub seed: u64,
    #[serde(with = "actg_core::json_float")]
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub dir: PathBuf,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Reuse a sealed ledger and the step-2 artifacts already in the run
    /// directory instead of starting over.
    pub resume: bool,
}

#[derive(Serialize)]
struct FailureManifest<'a> {
    step: &'a str,
    error: String,
    completed: Vec<&'a str>,
    config_hash: String,
    seed: u64,
}

struct Tracker<'h> {
    done: Vec<Step>,
    current: Step,
    hook: &'h mut dyn FnMut(Step) -> Result<(), PipelineError>,
}

impl Tracker<'_> {
    fn start(&mut self, s: Step) {
        self.current = s;
    }

    fn finish(&mut self) -> Result<(), PipelineError> {
        self.done.push(self.current);
        (self.hook)(self.current)
    }
}

/// Runs the full procedure with the anchored variant.
pub fn run_actg_arl(cfg: &RunConfig) -> Result<RunArtifacts, PipelineError> {
    run_actg_arl_with(cfg, &Options::default(), &mut |_| Ok(()))
}

/// As [`run_actg_arl`], calling `hook` after every step.
pub fn run_actg_arl_with(
    cfg: &RunConfig,
    opts: &Options,
    hook: &mut dyn FnMut(Step) -> Result<(), PipelineError>,
) -> Result<RunArtifacts, PipelineError> {
    let dir = RunDir::new(&cfg.out);
    execute(cfg, &[Variant::ActgArl], false, opts, hook)?;
    let ledger = Ledger::load(&dir.ledger())?;
    Ok(RunArtifacts {
        root: dir.root().to_path_buf(),
        config: dir.config(),
        ledger: dir.ledger(),
        annotated: dir.artifact(rundir::ANNOTATED),
        feature_model: feature_model_path(&dir, cfg.stage1.method),
        policy_dpft: dir.artifact(rundir::POLICY_DPFT),
        anchor: Some(dir.artifact(rundir::ANCHOR)),
        policy_final: dir.artifact(rundir::POLICY_FINAL),
        synthetic_features: dir.artifact(rundir::SYNTHETIC_FEATURES),
        synthetic_texts: dir.artifact(rundir::SYNTHETIC_TEXTS),
        report: dir.metric(rundir::REPORT),
        metrics_csv: dir.metric(rundir::METRICS_CSV),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        epsilon: ledger.epsilon(),
    })
}

/// Runs every variant on shared upstream artifacts and writes
/// `metrics/comparison.csv`. Variant outputs go to `variants/<name>/`.
pub fn run_ablation(
    cfg: &RunConfig,
    variants: &[Variant],
    opts: &Options,
) -> Result<Vec<VariantOutcome>, PipelineError> {
    run_ablation_with(cfg, variants, opts, &mut |_| Ok(()))
}

pub fn run_ablation_with(
    cfg: &RunConfig,
    variants: &[Variant],
    opts: &Options,
    hook: &mut dyn FnMut(Step) -> Result<(), PipelineError>,
) -> Result<Vec<VariantOutcome>, PipelineError> {
    if variants.is_empty() {
        return Err(PipelineError::Config("no variants requested".into()));
    }
    execute(cfg, variants, true, opts, hook)
}

fn execute(
    cfg: &RunConfig,
    variants: &[Variant],
    per_variant_dirs: bool,
    opts: &Options,
    hook: &mut dyn FnMut(Step) -> Result<(), PipelineError>,
) -> Result<Vec<VariantOutcome>, PipelineError> {
    let dir = RunDir::new(&cfg.out);
    let _lock = dir.lock()?;
    let mut tracker = Tracker { done: Vec::new(), current: Step::Annotate, hook };
    let result = execute_locked(cfg, variants, per_variant_dirs, opts, &dir, &mut tracker);
    if let Err(e) = &result {
        let manifest = FailureManifest {
            step: tracker.current.name(),
            error: e.to_string(),
            completed: tracker.done.iter().map(|s| s.name()).collect(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
        };
        let _ = write_json(&dir.failure(), &manifest);
    }
    result
}

fn histogram_dir(dir: &RunDir) -> RunDir {
    dir.sub(Variant::HistogramS1.name())
}

fn execute_locked(
    cfg: &RunConfig,
    variants: &[Variant],
    per_variant_dirs: bool,
    opts: &Options,
    dir: &RunDir,
    t: &mut Tracker,
) -> Result<Vec<VariantOutcome>, PipelineError> {
    let resuming = opts.resume && Ledger::load(&dir.ledger()).is_ok_and(|l| l.is_sealed());
    cfg.validate(!resuming)?;
    dir.create()?;
    let failure = dir.failure();
    if failure.exists() {
        std::fs::remove_file(&failure).map_err(|e| PipelineError::io(&failure, e))?;
    }
    let mut fw = Firewall::new();
    private::register_private(cfg, dir, &mut fw);
    let schema = load_schema(cfg, &fw)?;
    let oracle = load_oracle(cfg, &schema, &fw)?;
    let wants_histogram = variants.contains(&Variant::HistogramS1) && cfg.stage1.method != Stage1Method::Histogram;
    let hist_dir = histogram_dir(dir);

    if !resuming {
        if dir.ledger().exists() {
            return Err(PipelineError::Ledger(format!(
                "{} already holds a ledger; resume it or use a fresh directory",
                dir.root().display()
            )));
        }
        std::fs::write(dir.config(), cfg.to_json()).map_err(|e| PipelineError::io(&dir.config(), e))?;
        t.start(Step::Annotate);
        private::annotate(cfg, dir, &fw, &schema, oracle.as_ref())?;
        t.finish()?;

        t.start(Step::FeatureGenerator);
        private::fit_feature_generator(cfg, dir, &fw, &schema, cfg.stage1.method, &dir.ledger())?;
        let mut ledgers = vec![dir.ledger()];
        if wants_histogram {
            hist_dir.create()?;
            private::fit_feature_generator(cfg, dir, &fw, &schema, Stage1Method::Histogram, &hist_dir.ledger())?;
            ledgers.push(hist_dir.ledger());
        }
        t.finish()?;

        t.start(Step::ConditionalGenerator);
        let refs: Vec<&std::path::Path> = ledgers.iter().map(PathBuf::as_path).collect();
        private::train_generator(cfg, dir, &fw, &schema, &refs)?;
        t.finish()?;
    } else if wants_histogram && !feature_model_path(dir, Stage1Method::Histogram).exists() {
        return Err(PipelineError::Ledger("the histogram feature generator cannot be fit after sealing".into()));
    }

    t.start(Step::Sealed);
    let ledger = Ledger::load(&dir.ledger())?;
    if !ledger.is_sealed() {
        return Err(PipelineError::Ledger("ledger was not sealed after step 2".into()));
    }
    fw.seal();
    t.finish()?;

    let fw = &fw;
    let main_model = load_feature_model(&feature_model_path(dir, cfg.stage1.method), cfg.stage1.method, fw)?;
    let policy_dpft = dir.artifact(rundir::POLICY_DPFT);
    let anchor_path = dir.artifact(rundir::ANCHOR);
    if variants.contains(&Variant::ActgArl) {
        t.start(Step::Anchor);
        if !(resuming && anchor_path.exists()) {
            public::build_anchor(cfg, dir, fw, &schema, oracle.as_ref(), &main_model, &policy_dpft)?;
        }
        t.finish()?;
    }
    let reference = public::load_reference(cfg, fw, &schema, oracle.as_ref())?;

    let mut outcomes = Vec::with_capacity(variants.len());
    for &v in variants {
        let out = if per_variant_dirs { dir.sub(v.name()) } else { dir.clone() };
        out.create()?;
        let hist_model;
        let model = if v == Variant::HistogramS1 {
            hist_model = load_feature_model(&feature_model_path(dir, Stage1Method::Histogram), Stage1Method::Histogram, fw)?;
            &hist_model
        } else {
            &main_model
        };
        t.start(Step::Control);
        public::control(cfg, &out, fw, &schema, oracle.as_ref(), model, &policy_dpft, &anchor_path, v.control())?;
        t.finish()?;
        t.start(Step::Generate);
        public::generate(cfg, &out, fw, &schema, model, &out.artifact(rundir::POLICY_FINAL))?;
        t.finish()?;
        t.start(Step::Evaluate);
        let report = public::evaluate(cfg, &out, fw, &schema, oracle.as_ref(), reference.as_ref())?;
        t.finish()?;
        outcomes.push(VariantOutcome { variant: v, dir: out.root().to_path_buf(), report });
    }
    if per_variant_dirs {
        let rows: Vec<(String, MetricReport)> =
            outcomes.iter().map(|o| (o.variant.name().to_string(), o.report.clone())).collect();
        let path = dir.metric(rundir::COMPARISON_CSV);
        std::fs::write(&path, public::comparison_csv(&rows)).map_err(|e| PipelineError::io(&path, e))?;
    }
    write_manifest(cfg, dir)?;
    Ok(outcomes)
}

#[derive(Serialize)]
struct Manifest {
    config_hash: String,
    seed: u64,
    files: std::collections::BTreeMap<String, String>,
}

/// Digest of every file in the run directory, stamped with hash and seed.
fn write_manifest(cfg: &RunConfig, dir: &RunDir) -> Result<(), PipelineError> {
    let manifest_path = dir.artifact(rundir::MANIFEST);
    let mut files = std::collections::BTreeMap::new();
    let mut stack = vec![dir.root().to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| PipelineError::io(&d, e))? {
            let p = entry.map_err(|e| PipelineError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p != manifest_path && p.file_name().is_some_and(|n| n != ".lock") {
                let rel = p.strip_prefix(dir.root()).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                files.insert(rel, rundir::file_digest(&p)?);
            }
        }
    }
    write_json(&manifest_path, &Manifest { config_hash: cfg.hash(), seed: cfg.seed, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn public_phase_source_never_names_private_inputs() {
        let src = include_str!("public.rs");
        for needle in ["private", "ANNOTATED", "annotated.jsonl", "register"] {
            assert!(!src.contains(needle), "public.rs mentions `{needle}`");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::Actg, Variant::ActgRl, Variant::ActgArl, Variant::HistogramS1] {
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
            let back: Variant = serde_json::from_str(&json).unwrap();
            assert_eq!(back, v);
        }
    }
}
