//! Desk-world corpus: short abstract-like texts whose keywords encode four
//! categorical attributes, with a keyword lexicon that recovers them.
//!
//! A title names every attribute in fixed slots and ends with `:`. A body,
//! when present, opens with a claim sentence restating the organism, approach
//! and scale (`samples of yeast-cells were profiled and results with ...`).
//! Later sentences are field jargon or claims about related work, which use
//! the same template with arbitrary options. The lexicon reads the claim that
//! directly follows the title and lets it override the title; later claims
//! are ignored. Every slot has its own word list, so the corpus is close to a
//! first-order chain.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::extraction::Lexicon;
use crate::rng::{derive_seed, rng, Rng};
use crate::schema::{FeatureRecord, Schema, TextRecord};

const FIELDS: [&str; 6] = ["neuroscience", "genomics", "immunology", "ecology", "microbiology", "biophysics"];
const ORGANISMS: [&str; 6] = ["human", "mouse", "zebrafish", "drosophila", "yeast", "arabidopsis"];
const APPROACHES: [&str; 4] = ["imaging", "sequencing", "modeling", "proteomics"];
const SCALES: [&str; 4] = ["molecular", "cellular", "tissue", "population"];

const JARGON: [[&str; 4]; 6] = [
    ["synapse", "cortex", "spiking", "axon"],
    ["locus", "variant", "chromatin", "allele"],
    ["antigen", "cytokine", "tcell", "antibody"],
    ["habitat", "species", "niche", "biomass"],
    ["bacteria", "biofilm", "strain", "colony"],
    ["force", "membrane", "diffusion", "elastic"],
];

const SUBJECTS: [&str; 5] = ["response", "pattern", "signal", "network", "pathway"];
const VERBS: [&str; 5] = ["shows", "reveals", "shapes", "controls", "predicts"];
const QUALITIES: [&str; 5] = ["robust", "distinct", "dynamic", "stable", "early"];
const OBJECTS: [&str; 5] = ["state", "function", "structure", "profile", "process"];
const PARTICIPLES: [&str; 4] = ["profiled", "compared", "analyzed", "measured"];
const RATINGS: [&str; 4] = ["promising", "consistent", "limited", "strong"];
const SPREADS: [&str; 4] = ["bounded", "coupled", "uniform", "variable"];

/// Per attribute: title pattern and opening-claim pattern (`None` for field).
fn slot_patterns(attr: usize, option: &str) -> (String, Option<String>) {
    const W: &str = "\\S+";
    match attr {
        1 => (format!("/\\bon {option}\\b/"), Some(format!("/: samples of {option}-cells\\b/"))),
        2 => (
            format!("/\\busing {option}\\b/"),
            Some(format!("/: samples of {W} were {W} and results with {option}-data\\b/")),
        ),
        3 => (
            format!("/\\bat {option} scale\\b/"),
            Some(format!("/: samples of {W} were {W} and results with {W} look {W} while changes within {option}-level\\b/")),
        ),
        _ => (format!("/\\b{option}\\b/"), None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n: usize,
    /// Probability that a restatement names a different option.
    pub noise: f64,
    /// Share of texts consisting of the title only.
    pub empty_body_rate: f64,
    /// Probability that a sentence after the opening claim is a related-work claim.
    pub related_rate: f64,
    /// Probability of ending the body after each sentence.
    pub stop_rate: f64,
    pub max_sentences: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { n: 5000, noise: 0.0, empty_body_rate: 0.1, related_rate: 0.15, stop_rate: 0.25, max_sentences: 12, seed: 0 }
    }
}

pub fn toy_schema() -> Schema {
    Schema::from_pairs(
        "desk-world",
        &[("field", &FIELDS[..]), ("organism", &ORGANISMS[..]), ("approach", &APPROACHES[..]), ("scale", &SCALES[..])],
    )
    .expect("static schema is valid")
}

/// Restatement rules for every option come first, then title rules, both in
/// option order; the first option is the default.
pub fn toy_lexicon(schema: &Schema) -> Lexicon {
    let rules: Vec<Vec<(String, String)>> = schema
        .attributes()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let pats: Vec<_> = a.options.iter().map(|o| (slot_patterns(i, o), o.clone())).collect();
            let body = pats.iter().filter_map(|((_, b), o)| b.clone().map(|b| (b, o.clone())));
            let title = pats.iter().map(|((t, _), o)| (t.clone(), o.clone()));
            body.chain(title).collect()
        })
        .collect();
    let entries: Vec<(&str, Vec<(&str, &str)>, &str)> = schema
        .attributes()
        .iter()
        .zip(&rules)
        .map(|(a, rs)| {
            (a.name.as_str(), rs.iter().map(|(p, o)| (p.as_str(), o.as_str())).collect(), a.options[0].as_str())
        })
        .collect();
    Lexicon::new(schema, &entries).expect("toy lexicon matches toy schema")
}

/// Every token the generator can emit, in a fixed order.
pub fn toy_vocabulary() -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut add = |w: &str| {
        if !out.iter().any(|o| o == w) {
            out.push(w.to_string());
        }
    };
    for w in FIELDS.iter().chain(&ORGANISMS).chain(&APPROACHES).chain(&SCALES) {
        add(w);
    }
    for w in ["research", "on", "using", "at", "scale", ":", ".", "the", "samples", "of", "were", "and"] {
        add(w);
    }
    for w in ["results", "with", "look", "while", "changes", "within", "remain"] {
        add(w);
    }
    for o in ORGANISMS {
        add(&format!("{o}-cells"));
    }
    for a in APPROACHES {
        add(&format!("{a}-data"));
    }
    for s in SCALES {
        add(&format!("{s}-level"));
    }
    for w in JARGON.iter().flatten().chain(&SUBJECTS).chain(&VERBS).chain(&QUALITIES).chain(&OBJECTS) {
        add(w);
    }
    for w in PARTICIPLES.iter().chain(&RATINGS).chain(&SPREADS) {
        add(w);
    }
    out
}

fn weighted(r: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = r.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Skewed, correlated latent features.
pub fn sample_features(r: &mut Rng) -> FeatureRecord {
    let field = weighted(r, &[0.3, 0.25, 0.15, 0.12, 0.1, 0.08]);
    let mut org_w = [1.0; 6];
    org_w[field] += 6.0;
    org_w[(field + 2) % 6] += 2.0;
    let organism = weighted(r, &org_w);
    let mut app_w = [1.0; 4];
    app_w[field % 4] += 4.0;
    let approach = weighted(r, &app_w);
    let mut scale_w = [1.0; 4];
    scale_w[(approach + organism) % 4] += 3.0;
    let scale = weighted(r, &scale_w);
    FeatureRecord::new(vec![field, organism, approach, scale])
}

fn pick<'a>(r: &mut Rng, words: &[&'a str]) -> &'a str {
    words.choose(r).copied().expect("non-empty word list")
}

fn other(r: &mut Rng, n: usize, truth: usize) -> usize {
    (truth + r.random_range(1..n)) % n
}

/// `samples of X-cells were .. and results with Y-data look .. while
/// changes within Z-level remain .. .`
fn claim(r: &mut Rng, organism: usize, approach: usize, scale: usize) -> Vec<String> {
    vec![
        "samples".into(),
        "of".into(),
        format!("{}-cells", ORGANISMS[organism]),
        "were".into(),
        pick(r, &PARTICIPLES).into(),
        "and".into(),
        "results".into(),
        "with".into(),
        format!("{}-data", APPROACHES[approach]),
        "look".into(),
        pick(r, &RATINGS).into(),
        "while".into(),
        "changes".into(),
        "within".into(),
        format!("{}-level", SCALES[scale]),
        "remain".into(),
        pick(r, &SPREADS).into(),
        ".".into(),
    ]
}

fn noisy(r: &mut Rng, n: usize, truth: usize, noise: f64) -> usize {
    if noise > 0.0 && r.random::<f64>() < noise {
        other(r, n, truth)
    } else {
        truth
    }
}

/// Renders a text for `f`.
pub fn render(f: &FeatureRecord, cfg: &ToyConfig, r: &mut Rng) -> TextRecord {
    let [field, organism, approach, scale] = [f.values[0], f.values[1], f.values[2], f.values[3]];
    let mut t: Vec<String> = [
        FIELDS[field], "research", "on", ORGANISMS[organism], "using", APPROACHES[approach], "at", SCALES[scale],
        "scale", ":",
    ]
    .iter()
    .map(|w| w.to_string())
    .collect();
    if r.random::<f64>() < cfg.empty_body_rate {
        return TextRecord::from_tokens(t);
    }
    let (o, a, sc) = (noisy(r, 6, organism, cfg.noise), noisy(r, 4, approach, cfg.noise), noisy(r, 4, scale, cfg.noise));
    t.extend(claim(r, o, a, sc));
    let jargon = &JARGON[field];
    for _ in 1..cfg.max_sentences.max(1) {
        if r.random::<f64>() < cfg.stop_rate {
            break;
        }
        if r.random::<f64>() < cfg.related_rate {
            let (o, a, sc) = (r.random_range(0..6), r.random_range(0..4), r.random_range(0..4));
            t.extend(claim(r, o, a, sc));
        } else {
            for w in ["the", pick(r, jargon), pick(r, &SUBJECTS), pick(r, &VERBS), pick(r, &QUALITIES), pick(r, &OBJECTS), "."] {
                t.push(w.into());
            }
        }
    }
    TextRecord::from_tokens(t)
}

/// `(latent feature, text)` pairs.
pub fn toy_corpus(cfg: &ToyConfig) -> Vec<(FeatureRecord, TextRecord)> {
    let mut fr = rng(derive_seed(cfg.seed, "toy/features"));
    let mut tr = rng(derive_seed(cfg.seed, "toy/text"));
    (0..cfg.n)
        .map(|_| {
            let f = sample_features(&mut fr);
            let t = render(&f, cfg, &mut tr);
            (f, t)
        })
        .collect()
}
