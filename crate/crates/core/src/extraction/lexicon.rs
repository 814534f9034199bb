use std::collections::BTreeMap;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Oracle, OracleError};
use crate::schema::{FeatureRecord, Schema, TextRecord};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon parse error: {0}")]
    Parse(String),
    #[error("lexicon names unknown attribute '{0}'")]
    UnknownAttribute(String),
    #[error("lexicon has no entry for attribute '{0}'")]
    MissingAttribute(String),
    #[error("attribute '{attribute}': option '{option}' not in schema")]
    UnknownOption { attribute: String, option: String },
    #[error("attribute '{0}' has no default option")]
    MissingDefault(String),
    #[error("bad regex '{pattern}': {reason}")]
    Regex { pattern: String, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A keyword pattern. `/.../` denotes a regular expression; anything else is
/// a case-insensitive substring.
#[derive(Debug, Clone)]
pub enum Pattern {
    Substring(String),
    Regex(Regex),
}

impl Pattern {
    pub fn parse(raw: &str) -> Result<Self, LexiconError> {
        if raw.len() >= 2 && raw.starts_with('/') && raw.ends_with('/') {
            let body = &raw[1..raw.len() - 1];
            let re = RegexBuilder::new(body)
                .case_insensitive(true)
                .build()
                .map_err(|e| LexiconError::Regex { pattern: raw.to_string(), reason: e.to_string() })?;
            Ok(Pattern::Regex(re))
        } else {
            Ok(Pattern::Substring(raw.to_lowercase()))
        }
    }

    fn matches(&self, text: &str, lowered: &str) -> bool {
        match self {
            Pattern::Substring(s) => lowered.contains(s.as_str()),
            Pattern::Regex(re) => re.is_match(text),
        }
    }

    fn source(&self) -> String {
        match self {
            Pattern::Substring(s) => s.clone(),
            Pattern::Regex(re) => format!("/{}/", re.as_str()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub pattern: Pattern,
    pub option: usize,
}

#[derive(Debug, Clone)]
struct AttributeRules {
    rules: Vec<Rule>,
    default: usize,
}

/// Ordered keyword rules per attribute, validated against a schema.
#[derive(Debug, Clone)]
pub struct Lexicon {
    attributes: Vec<AttributeRules>,
    schema_hash: String,
}

#[derive(Deserialize, Serialize)]
struct RawRule {
    pattern: String,
    option: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Object { rules: Vec<RawRule>, default: String },
    List(Vec<Value>),
}

impl Lexicon {
    /// Builds a lexicon from `(attribute, [(pattern, option)], default)`.
    pub fn new(schema: &Schema, entries: &[(&str, Vec<(&str, &str)>, &str)]) -> Result<Self, LexiconError> {
        let mut map = BTreeMap::new();
        for (attr, rules, default) in entries {
            let rules = rules
                .iter()
                .map(|(p, o)| RawRule { pattern: p.to_string(), option: o.to_string() })
                .collect();
            map.insert(attr.to_string(), (rules, default.to_string()));
        }
        Self::build(schema, map)
    }

    pub fn parse(document: &str, schema: &Schema) -> Result<Self, LexiconError> {
        let raw: BTreeMap<String, RawEntry> =
            serde_json::from_str(document).map_err(|e| LexiconError::Parse(e.to_string()))?;
        let mut map = BTreeMap::new();
        for (attr, entry) in raw {
            let parsed = match entry {
                RawEntry::Object { rules, default } => (rules, default),
                RawEntry::List(items) => {
                    let mut rules = Vec::new();
                    let mut default = None;
                    for item in items {
                        if let Some(d) = item.get("default").and_then(Value::as_str) {
                            default = Some(d.to_string());
                        } else {
                            let r: RawRule =
                                serde_json::from_value(item).map_err(|e| LexiconError::Parse(format!("{attr}: {e}")))?;
                            rules.push(r);
                        }
                    }
                    (rules, default.ok_or_else(|| LexiconError::MissingDefault(attr.clone()))?)
                }
            };
            map.insert(attr, parsed);
        }
        Self::build(schema, map)
    }

    pub fn load(path: impl AsRef<Path>, schema: &Schema) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?, schema)
    }

    fn build(schema: &Schema, mut map: BTreeMap<String, (Vec<RawRule>, String)>) -> Result<Self, LexiconError> {
        if let Some(unknown) = map.keys().find(|k| schema.attribute_index(k).is_none()) {
            return Err(LexiconError::UnknownAttribute(unknown.clone()));
        }
        let mut attributes = Vec::with_capacity(schema.len());
        for spec in schema.attributes() {
            let (raw_rules, default) =
                map.remove(&spec.name).ok_or_else(|| LexiconError::MissingAttribute(spec.name.clone()))?;
            let lookup = |option: &str| {
                spec.option_index(option).ok_or_else(|| LexiconError::UnknownOption {
                    attribute: spec.name.clone(),
                    option: option.to_string(),
                })
            };
            let mut rules = Vec::with_capacity(raw_rules.len());
            for r in raw_rules {
                rules.push(Rule { pattern: Pattern::parse(&r.pattern)?, option: lookup(&r.option)? });
            }
            attributes.push(AttributeRules { rules, default: lookup(&default)? });
        }
        Ok(Self { attributes, schema_hash: schema.hash() })
    }

    /// Serializes back to the object file form.
    pub fn to_json(&self, schema: &Schema) -> String {
        let mut out = serde_json::Map::new();
        for (spec, a) in schema.attributes().iter().zip(&self.attributes) {
            let rules: Vec<Value> = a
                .rules
                .iter()
                .map(|r| serde_json::json!({"pattern": r.pattern.source(), "option": spec.options[r.option]}))
                .collect();
            out.insert(spec.name.clone(), serde_json::json!({"rules": rules, "default": spec.options[a.default]}));
        }
        serde_json::to_string_pretty(&Value::Object(out)).expect("json")
    }

    pub fn is_for(&self, schema: &Schema) -> bool {
        self.schema_hash == schema.hash()
    }
}

/// First matching rule per attribute wins; otherwise the default option.
pub fn rule_extract(text: &TextRecord, schema: &Schema, lexicon: &Lexicon) -> FeatureRecord {
    debug_assert_eq!(schema.len(), lexicon.attributes.len());
    let lowered = text.text.to_lowercase();
    let values = lexicon
        .attributes
        .iter()
        .map(|a| {
            a.rules
                .iter()
                .find(|r| r.pattern.matches(&text.text, &lowered))
                .map_or(a.default, |r| r.option)
        })
        .collect();
    FeatureRecord::new(values)
}

impl Oracle for Lexicon {
    fn extract(&self, text: &TextRecord, schema: &Schema) -> Result<FeatureRecord, OracleError> {
        if !self.is_for(schema) {
            return Err(OracleError::NonConforming("lexicon built for a different schema".into()));
        }
        Ok(rule_extract(text, schema, self))
    }
}
