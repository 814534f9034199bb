use std::path::PathBuf;
use std::process::ExitCode;

use actg_core::accountant::{
    calibrate_rho, calibrate_sigma, compose, delta_rule, rdp_to_dp, split_budget, MechanismSpec,
};
use actg_core::toy::ToyConfig;
use actg_pipeline::firewall::Firewall;
use actg_pipeline::inputs::{feature_model_path, load_feature_model, load_oracle, load_schema};
use actg_pipeline::public::{self, Control};
use actg_pipeline::rundir::{self, RunDir};
use actg_pipeline::toy::{toy_corpus_config, toy_run_config, write_toy_inputs};
use actg_pipeline::{private, Ledger, Options, PipelineError, RunConfig, Stage1Method, Variant};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "actg", version, about = "Differentially private attribute-conditioned text synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Step 1: extract features from the private corpus.
    Annotate(Common),
    /// Step 2a: fit the DP feature generator.
    SynthFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Step 2b: DP fine-tuning of the conditional generator; seals the ledger.
    TrainGenerator(Common),
    /// Step 3: best-of-N anchor set.
    Bestofn(Common),
    /// Step 4: reward optimisation of the fine-tuned generator.
    ArlTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "arl")]
        mode: ModeArg,
        #[command(flatten)]
        arl: ArlOverrides,
    },
    /// Step 5: synthetic features and texts.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of synthetic samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Metrics of the synthetic set against the reference corpus.
    Evaluate(Common),
    /// All steps with the anchored variant.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Several variants on shared upstream artifacts.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "actg,actg-rl,actg-arl")]
        variants: Vec<Variant>,
        #[arg(long)]
        resume: bool,
    },
    /// Privacy accounting utilities.
    #[command(subcommand)]
    Accountant(AccountantCmd),
    /// Writes the desk-world corpus, reference set, schema, lexicon,
    /// vocabulary and a run config into a directory.
    ToyCorpus {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 2_000)]
        reference_n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

/// Overrides of the control section of the config.
#[derive(Args, Clone, Copy)]
struct ArlOverrides {
    #[arg(long)]
    gamma_start: Option<f64>,
    #[arg(long)]
    gamma_end: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long)]
    kl: Option<f64>,
}

impl ArlOverrides {
    fn apply(&self, cfg: &mut actg_core::control::ArlConfig) {
        let a = *self;
        cfg.gamma_start = a.gamma_start.unwrap_or(cfg.gamma_start);
        cfg.gamma_end = a.gamma_end.unwrap_or(cfg.gamma_end);
        cfg.rounds = a.rounds.unwrap_or(cfg.rounds);
        cfg.buffer = a.buffer.unwrap_or(cfg.buffer);
        cfg.kl_coef = a.kl.unwrap_or(cfg.kl_coef);
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Aim,
    Histogram,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    None,
    Rl,
    Arl,
}

#[derive(Args)]
struct MechanismArgs {
    /// Gaussian mechanism as SIGMA or SIGMA:STEPS.
    #[arg(long)]
    gaussian: Vec<String>,
    /// Subsampled Gaussian as SIGMA:Q:STEPS.
    #[arg(long)]
    subsampled: Vec<String>,
    /// zCDP budget.
    #[arg(long)]
    zcdp: Vec<f64>,
}

#[derive(Args)]
struct DeltaArgs {
    #[arg(long)]
    delta: Option<f64>,
    /// Dataset size for the size-based delta rule.
    #[arg(long)]
    n: Option<u64>,
}

#[derive(Subcommand)]
enum AccountantCmd {
    /// Composes mechanisms and reports (ε, δ).
    Compose {
        #[command(flatten)]
        mechanisms: MechanismArgs,
        #[command(flatten)]
        delta: DeltaArgs,
    },
    /// RDP curve and (ε, δ) of a single mechanism.
    Convert {
        #[command(flatten)]
        mechanisms: MechanismArgs,
        #[command(flatten)]
        delta: DeltaArgs,
    },
    /// Smallest noise multiplier (or largest ρ) meeting a target ε.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[command(flatten)]
        delta: DeltaArgs,
        #[arg(long, default_value_t = 0.05)]
        q: f64,
        #[arg(long, default_value_t = 600)]
        steps: u64,
        /// Calibrate a zCDP ρ instead of a DP-SGD σ.
        #[arg(long)]
        rho: bool,
    },
    /// Splits ε between the feature generator and DP-SGD.
    Split {
        #[arg(long)]
        epsilon: f64,
        #[command(flatten)]
        delta: DeltaArgs,
        #[arg(long, default_value_t = 0.3)]
        ratio: f64,
        #[arg(long, default_value_t = 0.05)]
        q: f64,
        #[arg(long, default_value_t = 600)]
        steps: u64,
    },
}

fn load_config(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn delta_of(d: &DeltaArgs) -> Result<f64, PipelineError> {
    match (d.delta, d.n) {
        (Some(x), _) => Ok(x),
        (None, Some(n)) => Ok(delta_rule(n)?),
        (None, None) => Err(PipelineError::Config("give --delta or --n".into())),
    }
}

fn parse_mechanisms(m: &MechanismArgs) -> Result<Vec<MechanismSpec>, PipelineError> {
    let num = |s: &str| s.parse::<f64>().map_err(|e| PipelineError::Config(format!("{s}: {e}")));
    let steps = |s: &str| s.parse::<u64>().map_err(|e| PipelineError::Config(format!("{s}: {e}")));
    let mut out = Vec::new();
    for g in &m.gaussian {
        let parts: Vec<&str> = g.split(':').collect();
        match parts.as_slice() {
            [s] => out.push(MechanismSpec::gaussian(num(s)?, 1)),
            [s, t] => out.push(MechanismSpec::gaussian(num(s)?, steps(t)?)),
            _ => return Err(PipelineError::Config(format!("bad --gaussian {g}"))),
        }
    }
    for g in &m.subsampled {
        match g.split(':').collect::<Vec<_>>().as_slice() {
            [s, q, t] => out.push(MechanismSpec::subsampled_gaussian(num(s)?, num(q)?, steps(t)?)),
            _ => return Err(PipelineError::Config(format!("bad --subsampled {g}"))),
        }
    }
    out.extend(m.zcdp.iter().map(|&r| MechanismSpec::zcdp(r)));
    if out.is_empty() {
        return Err(PipelineError::Config("no mechanism given".into()));
    }
    Ok(out)
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}

fn accountant(cmd: &AccountantCmd) -> Result<(), PipelineError> {
    match cmd {
        AccountantCmd::Compose { mechanisms, delta } => {
            let specs = parse_mechanisms(mechanisms)?;
            let g = rdp_to_dp(&compose(&specs)?, delta_of(delta)?)?;
            print(json!({ "epsilon": g.epsilon, "delta": g.delta, "order": g.order, "mechanisms": specs }));
        }
        AccountantCmd::Convert { mechanisms, delta } => {
            let specs = parse_mechanisms(mechanisms)?;
            let curve = compose(&specs)?;
            let g = rdp_to_dp(&curve, delta_of(delta)?)?;
            print(json!({ "epsilon": g.epsilon, "delta": g.delta, "order": g.order, "rdp": curve }));
        }
        AccountantCmd::Calibrate { epsilon, delta, q, steps, rho } => {
            let d = delta_of(delta)?;
            if *rho {
                print(json!({ "rho": calibrate_rho(*epsilon, d)?, "epsilon": epsilon, "delta": d }));
            } else {
                let sigma = calibrate_sigma(*epsilon, d, *q, *steps)?;
                print(json!({ "sigma": sigma, "epsilon": epsilon, "delta": d, "q": q, "steps": steps }));
            }
        }
        AccountantCmd::Split { epsilon, delta, ratio, q, steps } => {
            let s = split_budget(*epsilon, delta_of(delta)?, *ratio, *q, *steps)?;
            print(serde_json::to_value(s).expect("json"));
        }
    }
    Ok(())
}

/// State for a single-step command: locked run directory, firewall sealed
/// iff the ledger is.
struct StepCtx {
    cfg: RunConfig,
    dir: RunDir,
    fw: Firewall,
    _lock: actg_pipeline::rundir::LockGuard,
}

fn step_ctx(c: &Common) -> Result<StepCtx, PipelineError> {
    let cfg = load_config(c)?;
    let dir = RunDir::new(&cfg.out);
    let lock = dir.lock()?;
    let sealed = Ledger::load(&dir.ledger()).is_ok_and(|l| l.is_sealed());
    cfg.validate(!sealed)?;
    dir.create()?;
    if !dir.config().exists() {
        std::fs::write(dir.config(), cfg.to_json()).map_err(|e| PipelineError::io(&dir.config(), e))?;
    }
    let mut fw = Firewall::new();
    private::register_private(&cfg, &dir, &mut fw);
    if sealed {
        fw.seal();
    }
    Ok(StepCtx { cfg, dir, fw, _lock: lock })
}

fn step_common(cmd: &Command) -> &Common {
    match cmd {
        Command::Annotate(c) | Command::TrainGenerator(c) | Command::Bestofn(c) | Command::Evaluate(c) => c,
        Command::SynthFeatures { common, .. } | Command::ArlTrain { common, .. } | Command::Generate { common, .. } => common,
        _ => unreachable!("not a single step"),
    }
}

fn single_step(cmd: &Command) -> Result<(), PipelineError> {
    let common = step_common(cmd);
    let StepCtx { mut cfg, dir, fw, _lock } = step_ctx(common)?;
    match cmd {
        Command::ArlTrain { arl, .. } => arl.apply(&mut cfg.arl),
        Command::Generate { n: Some(n), .. } => cfg.generate.n_syn = *n,
        _ => {}
    }
    cfg.validate(false)?;
    let schema = load_schema(&cfg, &fw)?;
    let oracle = load_oracle(&cfg, &schema, &fw)?;
    let model = || load_feature_model(&feature_model_path(&dir, cfg.stage1.method), cfg.stage1.method, &fw);
    match cmd {
        Command::Annotate(_) => {
            if fw.is_sealed() {
                return Err(PipelineError::Ledger("sealed; annotation is closed".into()));
            }
            let n = private::annotate(&cfg, &dir, &fw, &schema, oracle.as_ref())?;
            eprintln!("annotated {n} records");
        }
        Command::SynthFeatures { method, .. } => {
            let m = match method {
                Some(MethodArg::Aim) => Stage1Method::Aim,
                Some(MethodArg::Histogram) => Stage1Method::Histogram,
                None => cfg.stage1.method,
            };
            private::fit_feature_generator(&cfg, &dir, &fw, &schema, m, &dir.ledger())?;
        }
        Command::TrainGenerator(_) => private::train_generator(&cfg, &dir, &fw, &schema, &[dir.ledger().as_path()])?,
        Command::Bestofn(_) => {
            let a = public::build_anchor(&cfg, &dir, &fw, &schema, oracle.as_ref(), &model()?, &dir.artifact(rundir::POLICY_DPFT))?;
            eprintln!("anchor set of {} entries, mean IFAcc {:.4}", a.len(), a.mean_score());
        }
        Command::ArlTrain { mode, .. } => {
            let mode = match mode {
                ModeArg::None => Control::None,
                ModeArg::Rl => Control::Rl,
                ModeArg::Arl => Control::Arl,
            };
            let (policy, anchor) = (dir.artifact(rundir::POLICY_DPFT), dir.artifact(rundir::ANCHOR));
            public::control(&cfg, &dir, &fw, &schema, oracle.as_ref(), &model()?, &policy, &anchor, mode)?;
        }
        Command::Generate { .. } => {
            public::generate(&cfg, &dir, &fw, &schema, &model()?, &dir.artifact(rundir::POLICY_FINAL))?;
        }
        Command::Evaluate(_) => {
            let reference = public::load_reference(&cfg, &fw, &schema, oracle.as_ref())?;
            let report = public::evaluate(&cfg, &dir, &fw, &schema, oracle.as_ref(), reference.as_ref())?;
            println!("{}", report.to_json());
        }
        _ => unreachable!(),
    }
    Ok(())
}

/// `Ok(false)` when a ledger exists and exceeds its budget.
fn budget_respected(out: &std::path::Path) -> Result<bool, PipelineError> {
    let path = RunDir::new(out).ledger();
    if !path.exists() {
        return Ok(true);
    }
    let ledger = Ledger::load(&path)?;
    if !ledger.within_budget() {
        eprintln!("ledger epsilon {} exceeds the budget {}", ledger.epsilon(), ledger.budget);
    }
    Ok(ledger.within_budget())
}

fn dispatch(cli: &Cli) -> Result<bool, PipelineError> {
    match &cli.command {
        Command::Accountant(cmd) => {
            accountant(cmd)?;
            Ok(true)
        }
        Command::ToyCorpus { dir, n, reference_n, seed, noise } => {
            let corpus = ToyConfig { n: *n, seed: *seed, noise: *noise, ..toy_corpus_config() };
            let inputs = write_toy_inputs(dir, &corpus, *reference_n)?;
            let mut cfg = toy_run_config(&inputs, dir.join("run"));
            // Paths in the written config are relative to it.
            for p in [&mut cfg.out, &mut cfg.data.private, &mut cfg.data.schema] {
                *p = p.strip_prefix(dir).map(PathBuf::from).unwrap_or_else(|_| p.clone());
            }
            for p in [&mut cfg.data.vocabulary, &mut cfg.data.reference, &mut cfg.oracle.lexicon].into_iter().flatten() {
                *p = p.strip_prefix(dir).map(PathBuf::from).unwrap_or_else(|_| p.clone());
            }
            let path = dir.join("config.toml");
            std::fs::write(&path, cfg.to_toml()?).map_err(|e| PipelineError::io(&path, e))?;
            eprintln!("wrote {}", path.display());
            Ok(true)
        }
        Command::Run { common, resume } => {
            let cfg = load_config(common)?;
            let art = actg_pipeline::run::run_actg_arl_with(&cfg, &Options { resume: *resume }, &mut |s| {
                eprintln!("done: {s:?}");
                Ok(())
            })?;
            println!("{}", std::fs::read_to_string(&art.metrics_csv).map_err(|e| PipelineError::io(&art.metrics_csv, e))?);
            budget_respected(&cfg.out)
        }
        Command::Ablation { common, variants, resume } => {
            let cfg = load_config(common)?;
            actg_pipeline::run::run_ablation_with(&cfg, variants, &Options { resume: *resume }, &mut |s| {
                eprintln!("done: {s:?}");
                Ok(())
            })?;
            let path = RunDir::new(&cfg.out).metric(rundir::COMPARISON_CSV);
            print!("{}", std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?);
            budget_respected(&cfg.out)
        }
        other => {
            single_step(other)?;
            budget_respected(&load_config(step_common(other))?.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
