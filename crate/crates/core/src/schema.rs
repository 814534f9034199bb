//! Tabular feature schemas, feature/text records and dataset persistence.
//!
//! A [`Schema`] is an ordered list of categorical attributes, each with a
//! closed list of options. Features are stored as option indices; option
//! strings only appear at I/O boundaries. Option strings are compared after
//! trimming surrounding whitespace, with no other normalisation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Upper bound on the number of options of a single attribute.
pub const MAX_OPTIONS: usize = 50;

/// Default context length, in tokens.
pub const DEFAULT_CONTEXT_LEN: usize = 512;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Parse(String),
    #[error("schema has no attributes")]
    Empty,
    #[error("duplicate attribute name `{0}`")]
    DuplicateAttribute(String),
    #[error("attribute `{attribute}` lists option `{option}` more than once")]
    DuplicateOption { attribute: String, option: String },
    #[error("attribute `{attribute}` has {count} options, need between 2 and {MAX_OPTIONS}")]
    OptionCount { attribute: String, count: usize },
    #[error("attribute name must be non-empty")]
    EmptyName,
    #[error("record {position}: {reason}")]
    InvalidRecord { position: usize, reason: String },
    #[error("no records given")]
    NoRecords,
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("attribute `{attribute}` has no option `{option}`")]
    UnknownOption { attribute: String, option: String },
    #[error("attribute `{0}` missing from feature object")]
    MissingAttribute(String),
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("text has {tokens} tokens, context length is {limit}")]
    ContextOverflow { tokens: usize, limit: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One categorical attribute with its closed option list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpec {
    pub name: String,
    pub options: Vec<String>,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, options: Vec<String>) -> Result<Self, SchemaError> {
        let name = name.into().trim().to_string();
        if name.is_empty() {
            return Err(SchemaError::EmptyName);
        }
        let options: Vec<String> = options.into_iter().map(|o| o.trim().to_string()).collect();
        if options.len() < 2 || options.len() > MAX_OPTIONS {
            return Err(SchemaError::OptionCount { attribute: name, count: options.len() });
        }
        for (i, o) in options.iter().enumerate() {
            if options[..i].contains(o) {
                return Err(SchemaError::DuplicateOption { attribute: name, option: o.clone() });
            }
        }
        Ok(Self { name, options })
    }

    pub fn cardinality(&self) -> usize {
        self.options.len()
    }

    /// Index of `option` after trimming, if it is one of this attribute's options.
    pub fn option_index(&self, option: &str) -> Option<usize> {
        let option = option.trim();
        self.options.iter().position(|o| o == option)
    }

    /// Index of the catch-all "Other" option, if the attribute has one.
    pub fn other_index(&self) -> Option<usize> {
        self.options.iter().position(|o| o.eq_ignore_ascii_case("other"))
    }
}

/// Ordered list of categorical attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub name: String,
    attributes: Vec<AttributeSpec>,
}

impl Schema {
    pub fn new(name: impl Into<String>, attributes: Vec<AttributeSpec>) -> Result<Self, SchemaError> {
        if attributes.is_empty() {
            return Err(SchemaError::Empty);
        }
        for (i, a) in attributes.iter().enumerate() {
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(SchemaError::DuplicateAttribute(a.name.clone()));
            }
        }
        Ok(Self { name: name.into(), attributes })
    }

    /// Builds a schema from `(name, options)` pairs.
    pub fn from_pairs<S: AsRef<str>>(name: &str, pairs: &[(&str, &[S])]) -> Result<Self, SchemaError> {
        let attrs = pairs
            .iter()
            .map(|(n, opts)| AttributeSpec::new(*n, opts.iter().map(|o| o.as_ref().to_string()).collect()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, attrs)
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    /// Number of attributes, `K`.
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attribute(&self, k: usize) -> &AttributeSpec {
        &self.attributes[k]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(AttributeSpec::cardinality).collect()
    }

    /// Size of the joint option domain (saturating).
    pub fn domain_size(&self) -> usize {
        self.attributes.iter().fold(1usize, |acc, a| acc.saturating_mul(a.cardinality()))
    }

    /// Total number of options across attributes.
    pub fn total_options(&self) -> usize {
        self.attributes.iter().map(AttributeSpec::cardinality).sum()
    }

    /// Parses a schema document: a JSON object mapping attribute name to an
    /// array of option strings, in order.
    pub fn parse(document: &str) -> Result<Self, SchemaError> {
        let doc: SchemaDoc = serde_json::from_str(document).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix(DUPLICATE_PREFIX) {
                Some(rest) => SchemaError::DuplicateAttribute(rest.split(" at line").next().unwrap_or(rest).to_string()),
                None => SchemaError::Parse(msg),
            }
        })?;
        let attrs = doc.0.into_iter().map(|(n, o)| AttributeSpec::new(n, o)).collect::<Result<Vec<_>, _>>()?;
        Self::new("schema", attrs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut schema = Self::parse(&text)?;
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            schema.name = stem.to_string();
        }
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialises")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SchemaError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; stamps model and policy files.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("schema serialises"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks that `record` has one in-range index per attribute.
    pub fn validate(&self, record: &FeatureRecord) -> Result<(), String> {
        if record.values.len() != self.len() {
            return Err(format!("expected {} values, found {}", self.len(), record.values.len()));
        }
        for (k, (&v, a)) in record.values.iter().zip(&self.attributes).enumerate() {
            if v >= a.cardinality() {
                return Err(format!("attribute {k} (`{}`) index {v} out of range {}", a.name, a.cardinality()));
            }
        }
        Ok(())
    }

    /// Resolves a `{attribute: option}` map into a record.
    pub fn record_from_strings<'a, I>(&self, pairs: I) -> Result<FeatureRecord, SchemaError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut values: Vec<Option<usize>> = vec![None; self.len()];
        for (attr, opt) in pairs {
            let k = self.attribute_index(attr).ok_or_else(|| SchemaError::UnknownAttribute(attr.to_string()))?;
            let spec = &self.attributes[k];
            let idx = spec.option_index(opt).ok_or_else(|| SchemaError::UnknownOption {
                attribute: spec.name.clone(),
                option: opt.to_string(),
            })?;
            values[k] = Some(idx);
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(k, v)| v.ok_or_else(|| SchemaError::MissingAttribute(self.attributes[k].name.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureRecord { values })
    }

    /// Option strings of a record, in attribute order.
    pub fn record_strings<'a>(&'a self, record: &FeatureRecord) -> Vec<(&'a str, &'a str)> {
        self.attributes
            .iter()
            .zip(&record.values)
            .map(|(a, &v)| (a.name.as_str(), a.options[v].as_str()))
            .collect()
    }

    /// Record as a JSON object `{attribute: option}` in attribute order.
    pub fn record_to_json(&self, record: &FeatureRecord) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (a, o) in self.record_strings(record) {
            map.insert(a.to_string(), serde_json::Value::String(o.to_string()));
        }
        serde_json::Value::Object(map)
    }

    /// Mixed-radix index of a record in the joint domain (first attribute most significant).
    pub fn joint_index(&self, record: &FeatureRecord) -> usize {
        record
            .values
            .iter()
            .zip(&self.attributes)
            .fold(0usize, |acc, (&v, a)| acc * a.cardinality() + v)
    }

    /// Inverse of [`Schema::joint_index`].
    pub fn record_from_joint(&self, mut index: usize) -> FeatureRecord {
        let mut values = vec![0; self.len()];
        for k in (0..self.len()).rev() {
            let c = self.attributes[k].cardinality();
            values[k] = index % c;
            index /= c;
        }
        FeatureRecord { values }
    }
}

const DUPLICATE_PREFIX: &str = "duplicate attribute ";

struct SchemaDoc(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for SchemaDoc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = SchemaDoc;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping attribute names to option arrays")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<SchemaDoc, A::Error> {
                let mut out: Vec<(String, Vec<String>)> = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<String>>()? {
                    if out.iter().any(|(n, _)| n.trim() == k.trim()) {
                        return Err(serde::de::Error::custom(format!("{DUPLICATE_PREFIX}{}", k.trim())));
                    }
                    out.push((k, v));
                }
                Ok(SchemaDoc(out))
            }
        }
        d.deserialize_map(V)
    }
}

impl Serialize for Schema {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.attributes.len()))?;
        for a in &self.attributes {
            map.serialize_entry(&a.name, &a.options)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = SchemaDoc::deserialize(d)?;
        let attrs = doc
            .0
            .into_iter()
            .map(|(n, o)| AttributeSpec::new(n, o))
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        Schema::new("schema", attrs).map_err(serde::de::Error::custom)
    }
}

/// One option index per schema attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub values: Vec<usize>,
}

impl FeatureRecord {
    pub fn new(values: Vec<usize>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Splits text into whitespace-delimited tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// A text with its token form and optional paired features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRecord {
    pub text: String,
    pub tokens: Vec<String>,
    pub features: Option<FeatureRecord>,
}

impl TextRecord {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { text, tokens, features: None }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        Self { text: tokens.join(" "), tokens, features: None }
    }

    pub fn with_features(mut self, features: FeatureRecord) -> Self {
        self.features = Some(features);
        self
    }

    pub fn check_context(&self, limit: usize) -> Result<(), SchemaError> {
        if self.tokens.len() > limit {
            return Err(SchemaError::ContextOverflow { tokens: self.tokens.len(), limit });
        }
        Ok(())
    }
}

/// Per-attribute probability vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDistribution {
    pub probs: Vec<Vec<f64>>,
}

impl AttributeDistribution {
    /// Checks non-negativity and unit mass (±1e-9) of every vector.
    pub fn is_valid(&self) -> bool {
        self.probs.iter().all(|p| {
            p.iter().all(|&x| x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        })
    }

    pub fn attribute(&self, k: usize) -> &[f64] {
        &self.probs[k]
    }
}

/// Empirical per-attribute option frequencies.
pub fn feature_histogram(records: &[FeatureRecord], schema: &Schema) -> Result<AttributeDistribution, SchemaError> {
    if records.is_empty() {
        return Err(SchemaError::NoRecords);
    }
    let mut counts: Vec<Vec<u64>> = schema.cardinalities().into_iter().map(|c| vec![0; c]).collect();
    for (position, r) in records.iter().enumerate() {
        schema.validate(r).map_err(|reason| SchemaError::InvalidRecord { position, reason })?;
        for (k, &v) in r.values.iter().enumerate() {
            counts[k][v] += 1;
        }
    }
    let n = records.len() as f64;
    let probs = counts.into_iter().map(|c| c.into_iter().map(|x| x as f64 / n).collect()).collect();
    Ok(AttributeDistribution { probs })
}

#[derive(Serialize, Deserialize)]
struct JsonLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<serde_json::Map<String, serde_json::Value>>,
}

/// Writes records as JSONL: `{"text": …, "features": {attr: option}}`.
pub fn save_jsonl(path: impl AsRef<Path>, records: &[TextRecord], schema: &Schema) -> Result<(), SchemaError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let features = r.features.as_ref().map(|f| match schema.record_to_json(f) {
            serde_json::Value::Object(m) => m,
            _ => unreachable!(),
        });
        let line = JsonLine { text: Some(r.text.clone()), features };
        serde_json::to_writer(&mut w, &line).map_err(|e| SchemaError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes feature records as JSONL lines of the form `{"features": {…}}`.
pub fn save_features_jsonl(path: impl AsRef<Path>, records: &[FeatureRecord], schema: &Schema) -> Result<(), SchemaError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let line = serde_json::json!({ "features": schema.record_to_json(r) });
        serde_json::to_writer(&mut w, &line).map_err(|e| SchemaError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL dataset. Blank lines are skipped; a missing `text` field
/// reads as the empty string. Errors cite 1-based line numbers.
pub fn load_jsonl(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<TextRecord>, SchemaError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonLine =
            serde_json::from_str(&line).map_err(|e| SchemaError::Line { line: line_no, reason: e.to_string() })?;
        let mut rec = TextRecord::new(parsed.text.unwrap_or_default());
        if let Some(map) = parsed.features {
            let mut pairs = Vec::with_capacity(map.len());
            for (k, v) in &map {
                let s = v.as_str().ok_or_else(|| SchemaError::Line {
                    line: line_no,
                    reason: format!("feature `{k}` is not a string"),
                })?;
                pairs.push((k.as_str(), s));
            }
            let f = schema
                .record_from_strings(pairs)
                .map_err(|e| SchemaError::Line { line: line_no, reason: e.to_string() })?;
            rec.features = Some(f);
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads the `features` of every line of a JSONL file; lines without features are an error.
pub fn load_features_jsonl(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<FeatureRecord>, SchemaError> {
    load_jsonl(path, schema)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.features.ok_or(SchemaError::Line { line: i + 1, reason: "missing features".into() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn binary() -> Schema {
        Schema::from_pairs("t", &[("outcome", &["yes", "no"][..])]).unwrap()
    }

    #[test]
    fn parse_keeps_document_order_and_trims() {
        let s = Schema::parse(r#"{"b": [" x ", "y"], "a": ["p", "q", "r"]}"#).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.attribute(0).name, "b");
        assert_eq!(s.attribute(0).options, vec!["x", "y"]);
        assert_eq!(s.attribute(1).cardinality(), 3);
    }

    #[test]
    fn parse_rejects_empty_document() {
        assert!(matches!(Schema::parse("{}"), Err(SchemaError::Empty)));
    }

    #[test]
    fn parse_rejects_duplicate_attribute() {
        let err = Schema::parse(r#"{"outcome": ["a", "b"], "outcome": ["c", "d"]}"#).unwrap_err();
        match err {
            SchemaError::DuplicateAttribute(name) => assert_eq!(name, "outcome"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_duplicate_option_and_short_lists() {
        assert!(matches!(
            Schema::parse(r#"{"a": ["x", " x"]}"#),
            Err(SchemaError::DuplicateOption { .. })
        ));
        assert!(matches!(Schema::parse(r#"{"a": []}"#), Err(SchemaError::OptionCount { .. })));
        assert!(matches!(Schema::parse(r#"{"a": ["only"]}"#), Err(SchemaError::OptionCount { .. })));
        let many: Vec<String> = (0..51).map(|i| format!("o{i}")).collect();
        let doc = serde_json::json!({ "a": many }).to_string();
        assert!(matches!(Schema::parse(&doc), Err(SchemaError::OptionCount { count: 51, .. })));
    }

    #[test]
    fn parse_rejects_malformed_json() {
        assert!(matches!(Schema::parse("{\"a\": [\"x\""), Err(SchemaError::Parse(_))));
        assert!(matches!(Schema::parse("[1, 2]"), Err(SchemaError::Parse(_))));
    }

    #[test]
    fn histogram_counts() {
        let s = binary();
        let recs: Vec<_> = [0, 0, 1, 0].iter().map(|&v| FeatureRecord::new(vec![v])).collect();
        let d = feature_histogram(&recs, &s).unwrap();
        assert_eq!(d.probs[0], vec![0.75, 0.25]);
        assert!(d.is_valid());
    }

    #[test]
    fn histogram_point_mass() {
        let s = Schema::from_pairs("t", &[("a", &["x", "y", "z"][..]), ("b", &["p", "q"][..])]).unwrap();
        let recs = vec![FeatureRecord::new(vec![2, 1]); 7];
        let d = feature_histogram(&recs, &s).unwrap();
        assert_eq!(d.probs[0], vec![0.0, 0.0, 1.0]);
        assert_eq!(d.probs[1], vec![0.0, 1.0]);
    }

    #[test]
    fn histogram_uniform_sampling_concentrates() {
        let s = Schema::from_pairs("t", &[("a", &["x", "y", "z"][..])]).unwrap();
        let mut rng = crate::rng::rng(11);
        let recs: Vec<_> = (0..10_000).map(|_| FeatureRecord::new(vec![rng.random_range(0..3)])).collect();
        let d = feature_histogram(&recs, &s).unwrap();
        for p in &d.probs[0] {
            assert!((p - 1.0 / 3.0).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn histogram_errors() {
        let s = binary();
        assert!(matches!(feature_histogram(&[], &s), Err(SchemaError::NoRecords)));
        let recs = vec![FeatureRecord::new(vec![0]), FeatureRecord::new(vec![5])];
        match feature_histogram(&recs, &s) {
            Err(SchemaError::InvalidRecord { position, .. }) => assert_eq!(position, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn joint_index_roundtrip() {
        let s = Schema::from_pairs("t", &[("a", &["x", "y", "z"][..]), ("b", &["p", "q"][..])]).unwrap();
        for i in 0..s.domain_size() {
            assert_eq!(s.joint_index(&s.record_from_joint(i)), i);
        }
    }

    #[test]
    fn record_strings_resolve() {
        let s = binary();
        let r = s.record_from_strings([("outcome", " no ")]).unwrap();
        assert_eq!(r.values, vec![1]);
        assert!(matches!(s.record_from_strings([("x", "no")]), Err(SchemaError::UnknownAttribute(_))));
        assert!(matches!(
            s.record_from_strings([("outcome", "maybe")]),
            Err(SchemaError::UnknownOption { .. })
        ));
    }
}
