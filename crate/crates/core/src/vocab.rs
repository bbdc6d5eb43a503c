//! Caption normalization, tokenization and the token vocabulary.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIALS: [&str; 4] = ["[PAD]", "[CLS]", "[EOS]", "[UNK]"];

/// Lowercases, turns punctuation into spaces and splits on whitespace.
/// Shared by the vocabulary and every caption metric.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Normalized text: tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    normalize_tokens(text).join(" ")
}

/// Dense token ids with the four special tokens fixed at 0..=3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Specials followed by every distinct normalized word, sorted.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = corpus.into_iter().flat_map(normalize_tokens).collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_tokens(tokens).expect("specials are in place")
    }

    /// Restores a vocabulary from its ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS.map(String::from) {
            return Err(Error::Config(
                "vocabulary must start with [PAD], [CLS], [EOS], [UNK]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Word ids only (no [CLS]/[EOS]); unknown words map to [UNK].
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        normalize_tokens(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Joins word tokens, skipping [PAD], [CLS] and stopping at [EOS].
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | CLS => continue,
                _ => words.push(self.token(id).unwrap_or(SPECIALS[UNK])),
            }
        }
        words.join(" ")
    }

    /// `[CLS] words... [EOS] [PAD]...` padded to exactly `len` positions, plus
    /// the validity mask (`false` on padding).
    pub fn encode_padded(&self, text: &str, len: usize) -> Result<(Vec<usize>, Vec<bool>)> {
        let words = self.tokenize(text);
        if words.len() + 2 > len {
            return Err(Error::Capacity(format!(
                "caption of {} tokens does not fit padded length {len}",
                words.len() + 2
            )));
        }
        let mut ids = Vec::with_capacity(len);
        ids.push(CLS);
        ids.extend(words);
        ids.push(EOS);
        let valid = ids.len();
        ids.resize(len, PAD);
        let mask = (0..len).map(|i| i < valid).collect();
        Ok((ids, mask))
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.len()) {
            Some(bad) => Err(Error::Tokenization(format!(
                "id {bad} outside vocabulary of {}",
                self.len()
            ))),
            None => Ok(()),
        }
    }
}
