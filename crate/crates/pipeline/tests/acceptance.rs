//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::time::{Duration, Instant};

use actg_core::accountant::{
    calibrate_sigma, compose, default_orders, delta_rule, gaussian_rdp, gaussian_rho, rdp_to_dp, zcdp_rdp, MechanismSpec,
};
use actg_core::eval::{attribute_jsd, js_distance, mauve_lite, HashedBow, MauveConfig, MetricReport};
use actg_core::gen::{clip_scale, dp_sgd_step, sgd_step, train_dpft, DpSgdConfig, TokenPolicy, Vocab, EOS};
use actg_core::rng::rng;
use actg_core::schema::{FeatureRecord, TextRecord};
use actg_core::synth::{aim_fit, fit_feature_histogram, AimConfig, FeatureSampler};
use actg_core::toy::{toy_corpus, toy_schema, ToyConfig};
use actg_pipeline::firewall::Firewall;
use actg_pipeline::rundir::RunDir;
use actg_pipeline::toy::{toy_corpus_config, toy_run_config, write_toy_inputs};
use actg_pipeline::{run_ablation, run_actg_arl_with, Ledger, Options, Step, Variant};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t <= limit, format!("{:.2}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn accounting() -> Outcome {
    let start = Instant::now();
    // Oracle: minimise α/2 + ln(1/δ)/(α−1) on a 1e-4 grid over (1, 64].
    let ln_inv = -(1e-5f64).ln();
    let oracle = (1..=640_000).map(|i| 1.0 + i as f64 * 1e-4).map(|a| a / 2.0 + ln_inv / (a - 1.0)).fold(f64::INFINITY, f64::min);
    let eps = rdp_to_dp(&compose(&[MechanismSpec::gaussian(1.0, 1)]).unwrap(), 1e-5).unwrap().epsilon;
    let reference = (eps - 5.299).abs() <= 0.01 && (eps - oracle).abs() <= 0.01;

    let interchangeable = [0.3, 1.0, 2.5, 10.0].iter().all(|&sigma: &f64| {
        let rho = gaussian_rho(sigma);
        (rho - 1.0 / (2.0 * sigma * sigma)).abs() <= 1e-15 * rho
            && default_orders().iter().all(|&a| zcdp_rdp(rho, a) == gaussian_rdp(sigma, a))
    });

    let parts = [
        MechanismSpec::gaussian(1.3, 3),
        MechanismSpec::zcdp(0.07),
        MechanismSpec::subsampled_gaussian(0.9, 0.05, 200),
    ];
    let total = compose(&parts).unwrap();
    let mut sum = parts[0].curve().unwrap();
    for p in &parts[1..] {
        sum = sum.add(&p.curve().unwrap()).unwrap();
    }
    let additive = total.orders == sum.orders && total.eps == sum.eps;
    let (fast, t) = within(start, Duration::from_secs(1));
    outcome(
        reference && interchangeable && additive && fast,
        format!("eps {eps:.4}, oracle {oracle:.4}, interchangeable {interchangeable}, additive {additive}, {t}"),
    )
}

fn calibration() -> Outcome {
    let start = Instant::now();
    let n = 28_846;
    let delta = delta_rule(n).unwrap();
    let q = 2048.0 / n as f64;
    let mut worst = 0.0f64;
    for eps in [1.0, 4.0] {
        for steps in [1120, 1170] {
            let sigma = calibrate_sigma(eps, delta, q, steps).unwrap();
            let back = rdp_to_dp(&compose(&[MechanismSpec::subsampled_gaussian(sigma, q, steps)]).unwrap(), delta).unwrap();
            worst = worst.max((back.epsilon - eps).abs() / eps);
        }
    }
    let (fast, t) = within(start, Duration::from_secs(10));
    let delta_ok = (delta - 3.38e-6).abs() < 0.01e-6;
    outcome(worst <= 1e-3 && delta_ok && fast, format!("delta {delta:.3e}, worst relative error {worst:.2e}, {t}"))
}

fn random_distribution(r: &mut actg_core::rng::Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| if r.random_bool(0.2) { 0.0 } else { r.random::<f64>() }).collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn random_features(r: &mut actg_core::rng::Rng, n: usize, cards: &[usize]) -> Vec<FeatureRecord> {
    // A random support per attribute keeps the three sets far apart.
    let support: Vec<usize> = cards.iter().map(|&c| r.random_range(1..=c)).collect();
    (0..n).map(|_| FeatureRecord::new(support.iter().map(|&s| r.random_range(0..s)).collect())).collect()
}

fn metric_laws() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let mut violations = 0;
    for _ in 0..2000 {
        let k = r.random_range(2..12);
        let (p, q, s) = (random_distribution(&mut r, k), random_distribution(&mut r, k), random_distribution(&mut r, k));
        let d = |a: &[f64], b: &[f64]| js_distance(a, b).unwrap();
        let (pq, qs, ps) = (d(&p, &q), d(&q, &s), d(&p, &s));
        let ok = pq == d(&q, &p)
            && (0.0..=1.0).contains(&pq)
            && d(&p, &p) == 0.0
            && ps <= pq + qs + 1e-12;
        violations += usize::from(!ok);
    }

    let schema = toy_schema();
    let cards = schema.cardinalities();
    let mut wiring = 0;
    for _ in 0..200 {
        let (a, b, c) = (random_features(&mut r, 60, &cards), random_features(&mut r, 60, &cards), random_features(&mut r, 60, &cards));
        let (f, f1, f2) = (attribute_jsd(&schema, &a, &c).unwrap(), attribute_jsd(&schema, &a, &b).unwrap(), attribute_jsd(&schema, &b, &c).unwrap());
        wiring += f.per_attribute.iter().zip(&f1.per_attribute).zip(&f2.per_attribute).filter(|((x, y), z)| **x > **y + **z + 1e-12).count();
    }

    // Seeded pipeline runs: evaluation refuses to write a report that breaks
    // the triangle, and the written breakdowns are checked again here.
    let tmp = tempfile::tempdir().unwrap();
    let inputs = common::small_inputs(tmp.path(), 200);
    let mut runs = 0;
    for seed in 1..=3 {
        let mut cfg = common::small_config(&inputs, tmp.path().join(format!("run{seed}")));
        cfg.seed = seed;
        let out = run_ablation(&cfg, &[Variant::Actg], &Options::default()).unwrap();
        let rep = &out[0].report;
        let b = |m: &str| rep.per_attribute[m].values().copied().collect::<Vec<f64>>();
        let (f, f1, f2) = (b("djs_f"), b("djs_f1"), b("djs_f2"));
        wiring += (0..f.len()).filter(|&i| f[i] > f1[i] + f2[i] + 1e-12).count();
        runs += 1;
    }
    let (fast, t) = within(start, Duration::from_secs(30));
    outcome(
        violations == 0 && wiring == 0 && fast,
        format!("2000 triples with {violations} violations, 200 feature triples and {runs} seeded runs with {wiring} triangle breaks, {t}"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let schema = toy_schema();
    let vocab = Vocab::new(&["the", "mouse", "cell", "imaging", "study", "we", "."]).unwrap();
    let mut policy = TokenPolicy::new(vocab, &schema);
    let cards = schema.cardinalities();
    let mut r = rng(21);
    let (mut worst, mut checked) = (0.0f64, 0);
    let h = 1e-5;
    for _ in 0..100 {
        policy.params.iter_mut().for_each(|x| *x = r.random_range(-1.5..1.5));
        let f = FeatureRecord::new(cards.iter().map(|&c| r.random_range(0..c)).collect());
        let mut seq: Vec<u32> = (0..r.random_range(0..8)).map(|_| r.random_range(1..policy.vocab_size() as u32)).collect();
        seq.push(EOS);
        let g = policy.grad(&f, &seq).unwrap().to_dense(policy.num_params());
        let mut q = policy.clone();
        for i in 0..policy.num_params() {
            let x = q.params[i];
            q.params[i] = x + h;
            let up = q.logprob(&f, &seq).unwrap();
            q.params[i] = x - h;
            let down = q.logprob(&f, &seq).unwrap();
            q.params[i] = x;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1e-3));
            checked += 1;
        }
    }
    let (fast, t) = within(start, Duration::from_secs(30));
    outcome(worst <= 1e-6 && fast, format!("100 cases, {checked} coordinates, worst relative error {worst:.2e}, {t}"))
}

fn dp_sgd() -> Outcome {
    let start = Instant::now();
    let schema = toy_schema();
    let corpus = toy_corpus(&ToyConfig { n: 300, seed: 4, ..Default::default() });
    let texts: Vec<TextRecord> = corpus.iter().map(|(_, t)| t.clone()).collect();
    let vocab = Vocab::from_texts(&texts).unwrap();
    let data: Vec<(FeatureRecord, Vec<u32>)> = corpus.iter().map(|(f, t)| (f.clone(), vocab.encode(t).unwrap())).collect();
    let policy = TokenPolicy::new(vocab, &schema);

    let cfg = DpSgdConfig { clip: 1.0, sigma: 1.1, q: 0.1, steps: 100, lr: 0.5, seed: 9 };
    let mut max_clipped = 0.0f64;
    let a = train_dpft(policy.clone(), &data, &cfg, 1e-5, |_, _, s| max_clipped = max_clipped.max(s.max_clipped_norm)).unwrap();
    let b = train_dpft(policy.clone(), &data, &cfg, 1e-5, |_, _, _| {}).unwrap();
    let reproducible = a.policy.params.iter().zip(&b.policy.params).all(|(x, y)| x.to_bits() == y.to_bits());
    let direct = data.iter().all(|(f, t)| {
        let n = a.policy.grad(f, t).unwrap().norm();
        n * clip_scale(n, 1.0) <= 1.0 + 1e-12
    });

    let batch: Vec<(&FeatureRecord, &[u32])> = data.iter().take(32).map(|(f, t)| (f, t.as_slice())).collect();
    let plain = DpSgdConfig { clip: f64::INFINITY, sigma: 0.0, lr: 0.3, ..Default::default() };
    let mut x = a.policy.clone();
    dp_sgd_step(&mut x, &batch, &plain, 30.0, &mut rng(0)).unwrap();
    let mut y = a.policy.clone();
    sgd_step(&mut y, &batch, 0.3, 30.0).unwrap();
    let bitwise = x.params.iter().zip(&y.params).all(|(p, q)| p.to_bits() == q.to_bits());
    let (fast, t) = within(start, Duration::from_secs(60));
    outcome(
        max_clipped <= 1.0 + 1e-12 && direct && bitwise && reproducible && fast,
        format!("max clipped norm {max_clipped:.6}, sgd-equal {bitwise}, reproducible {reproducible}, {t}"),
    )
}

fn aim_fidelity() -> Outcome {
    let start = Instant::now();
    let schema = toy_schema();
    let truth: Vec<FeatureRecord> = toy_corpus(&ToyConfig { n: 10_000, seed: 1, ..Default::default() }).into_iter().map(|p| p.0).collect();
    let one_way = |rho: f64| {
        let m = aim_fit(&truth, &schema, &AimConfig { rho, seed: 1, ..Default::default() }).unwrap();
        attribute_jsd(&schema, &truth, &m.sample(10_000, 2)).unwrap().mean
    };
    let (noiseless, half) = (one_way(1e6), one_way(0.5));

    // Sparse regime: 300 records over a 576-cell joint domain, equal zCDP
    // budget, the histogram's σ set so that it spends exactly ρ.
    let sparse: Vec<FeatureRecord> = toy_corpus(&ToyConfig { n: 300, seed: 1, ..Default::default() }).into_iter().map(|p| p.0).collect();
    let rho = 0.5;
    let (mut wins, mut aim_sum, mut hist_sum) = (0, 0.0, 0.0);
    for seed in 1..=5u64 {
        let m = aim_fit(&sparse, &schema, &AimConfig { rho, seed, ..Default::default() }).unwrap();
        let h = fit_feature_histogram(&sparse, &schema, (0.5 / rho).sqrt(), 0.0, seed).unwrap();
        let a = attribute_jsd(&schema, &sparse, &m.sample(5000, 100 + seed)).unwrap().mean;
        let b = attribute_jsd(&schema, &sparse, &h.sample(5000, 100 + seed)).unwrap().mean;
        wins += usize::from(a < b);
        aim_sum += a;
        hist_sum += b;
    }
    let (aim_mean, hist_mean) = (aim_sum / 5.0, hist_sum / 5.0);
    let (fast, t) = within(start, Duration::from_secs(120));
    outcome(
        noiseless <= 0.02 && half <= 0.08 && wins == 5 && hist_mean - aim_mean >= 0.05 && fast,
        format!(
            "rho 1e6: {noiseless:.4}, rho 0.5: {half:.4}, sparse aim {aim_mean:.3} vs histogram {hist_mean:.3} ({wins}/5 seeds), {t}"
        ),
    )
}

fn reward_hacking() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_toy_inputs(tmp.path(), &toy_corpus_config(), 2000).unwrap();
    let cfg = toy_run_config(&inputs, tmp.path().join("run"));
    let out = run_ablation(&cfg, &[Variant::Actg, Variant::ActgRl, Variant::ActgArl], &Options::default()).unwrap();
    let get = |v: Variant| -> &MetricReport { &out.iter().find(|o| o.variant == v).unwrap().report };
    let m = |v: Variant, k: &str| get(v).get(k).unwrap();
    let (base, rl, arl) = (Variant::Actg, Variant::ActgRl, Variant::ActgArl);
    let (len0, len_rl, len_arl) = (m(base, "length_median"), m(rl, "length_median"), m(arl, "length_median"));
    let rl_hacks = m(rl, "ifacc") - m(base, "ifacc") >= 0.10
        && len_rl <= 0.5 * len0
        && m(base, "mauve") - m(rl, "mauve") >= 0.3;
    let arl_holds = m(arl, "ifacc") - m(base, "ifacc") >= 0.08
        && (len_arl - len0).abs() <= 0.2 * len0
        && (m(arl, "mauve") - m(base, "mauve")).abs() <= 0.1;
    let (fast, t) = within(start, Duration::from_secs(600));
    let row = |v: Variant| format!("{} ifacc {:.3} median {} mauve {:.3}", v.name(), m(v, "ifacc"), m(v, "length_median"), m(v, "mauve"));
    outcome(rl_hacks && arl_holds && fast, format!("{}; {}; {}; {t}", row(base), row(rl), row(arl)))
}

fn firewall() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let inputs = write_toy_inputs(tmp.path(), &ToyConfig { n: 2000, ..toy_corpus_config() }, 500).unwrap();
    let mut cfg = toy_run_config(&inputs, tmp.path().join("run"));
    cfg.anchor.prompts = 200;
    cfg.arl.rounds = 10;
    let private = inputs.private.clone();
    let mut deleted_at = None;
    let mut steps = 0;
    let result = run_actg_arl_with(&cfg, &Options::default(), &mut |s| {
        steps += 1;
        if s == Step::Sealed {
            std::fs::remove_file(&private).map_err(|e| actg_pipeline::PipelineError::io(&private, e))?;
            deleted_at = Some(steps);
        }
        Ok(())
    });
    let completed = result.is_ok() && !inputs.private.exists() && deleted_at.is_some();
    let ledger = Ledger::load(&RunDir::new(&cfg.out).ledger()).unwrap();
    let eps = ledger.epsilon();
    let mechanisms = ledger.count("zcdp") == 1 && ledger.count("subsampled_gaussian") == 1 && ledger.spend.ledger.len() == 2;

    let mut fw = Firewall::new();
    fw.register(&inputs.private);
    fw.seal();
    let refused = fw.open(&inputs.private).is_err() && fw.read_to_string(&inputs.reference).is_ok();
    let public_source = include_str!("../src/public.rs");
    let clean = !["private", "ANNOTATED", "annotated.jsonl", "register"].iter().any(|n| public_source.contains(n));
    let (_, t) = within(start, Duration::from_secs(600));
    outcome(
        completed && eps <= 4.0 && ledger.is_sealed() && mechanisms && refused && clean,
        format!(
            "run completed after deletion {completed}, eps {eps:.4} <= 4, one zcdp + one subsampled_gaussian {mechanisms}, sealed firewall refuses {refused}, public source clean {clean}, {t}"
        ),
    )
}

fn mauve_sanity() -> Outcome {
    let start = Instant::now();
    let texts: Vec<String> = toy_corpus(&ToyConfig { n: 5000, seed: 7, ..Default::default() }).into_iter().map(|(_, t)| t.text).collect();
    let cfg = MauveConfig::default();
    let same = mauve_lite(&texts, &texts, &HashedBow::default(), &cfg).unwrap();
    let shifted: Vec<String> = texts.iter().map(|t| t.split_whitespace().map(|w| format!("zq{w}")).collect::<Vec<_>>().join(" ")).collect();
    let disjoint = mauve_lite(&texts[..2500], &shifted[2500..], &HashedBow::default(), &cfg).unwrap();
    let rule = same.clusters == 500 && disjoint.clusters == 250;
    let (fast, t) = within(start, Duration::from_secs(60));
    outcome(
        same.score >= 0.99 && disjoint.score <= 0.05 && rule && fast,
        format!("identical {:.4}, disjoint {:.4}, clusters {} and {}, {t}", same.score, disjoint.score, same.clusters, disjoint.clusters),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("accounting exactness", accounting),
        ("calibration round trip", calibration),
        ("metric laws", metric_laws),
        ("gradient correctness", gradients),
        ("dp-sgd contract", dp_sgd),
        ("aim-lite fidelity", aim_fidelity),
        ("reward hacking and its mitigation", reward_hacking),
        ("privacy firewall", firewall),
        ("mauve-lite sanity", mauve_sanity),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let o = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("criterion {} ({name}): {} - {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
