use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::GenError;
use crate::schema::TextRecord;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
const BOS_STR: &str = "<bos>";
const EOS_STR: &str = "<eos>";

/// Token strings with `<bos>` at id 0 and `<eos>` at id 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// `tokens` excludes the sentinels, which are prepended.
    pub fn new<S: AsRef<str>>(tokens: &[S]) -> Result<Self, GenError> {
        let all: Vec<String> = [BOS_STR, EOS_STR]
            .into_iter()
            .map(String::from)
            .chain(tokens.iter().map(|t| t.as_ref().to_string()))
            .collect();
        Self::try_from(all)
    }

    /// Vocabulary of every token in the corpus, most frequent first.
    pub fn from_texts(texts: &[TextRecord]) -> Result<Self, GenError> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts {
            for tok in &t.tokens {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens: Vec<&str> = ranked.into_iter().map(|(t, _)| t).collect();
        Self::new(&tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids for a text, terminated by EOS.
    pub fn encode(&self, text: &TextRecord) -> Result<Vec<u32>, GenError> {
        let mut ids = text
            .tokens
            .iter()
            .map(|t| self.id(t).ok_or_else(|| GenError::UnknownToken(t.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        ids.push(EOS);
        Ok(ids)
    }

    /// Text for token ids; sentinels are dropped.
    pub fn decode(&self, ids: &[u32]) -> TextRecord {
        let tokens = ids
            .iter()
            .filter(|&&i| i != BOS && i != EOS)
            .filter_map(|&i| self.token(i).map(String::from))
            .collect();
        TextRecord::from_tokens(tokens)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = GenError;

    fn try_from(tokens: Vec<String>) -> Result<Self, GenError> {
        if tokens.len() < 4 {
            return Err(GenError::VocabTooSmall(tokens.len()));
        }
        if tokens[BOS as usize] != BOS_STR || tokens[EOS as usize] != EOS_STR {
            return Err(GenError::Format("vocabulary must start with <bos>, <eos>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(GenError::DuplicateToken(t.clone()));
            }
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
