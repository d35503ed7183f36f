//! Word/punctuation-level tokenizer with a small frequency-ranked vocabulary.
//!
//! Text is split into identifiers, integer literals, single punctuation
//! characters and newlines. Other whitespace is discarded and rebuilt on
//! decode with the `simple` spacing convention: one space between tokens,
//! none on either side of a newline.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const END: u32 = 1;
pub const NEWLINE: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<end>", "\n", "<unk>"];
const VOCAB_FILE_VERSION: u32 = 1;

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\n|[A-Za-z_][A-Za-z0-9_]*|[0-9]+|[^\sA-Za-z0-9_]").expect("token regex")
});

/// Splits text into raw token strings.
pub fn split_tokens(text: &str) -> impl Iterator<Item = &str> {
    TOKEN_RE.find_iter(text).map(|m| m.as_str())
}

/// A sequence of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Keeps only the last `max` tokens.
    pub fn truncate_front(&mut self, max: usize) {
        if self.0.len() > max {
            self.0.drain(..self.0.len() - max);
        }
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Simple,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
    spacing: Spacing,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    tokens: Vec<String>,
    spacing: Spacing,
}

impl Vocab {
    /// Builds a vocabulary of at most `max_size` entries, four of which are reserved.
    ///
    /// Non-reserved tokens are ranked by corpus frequency, ties broken by the
    /// token string ascending.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::CorpusEmpty);
        }
        if max_size <= RESERVED.len() {
            return Err(Error::InvalidConfig(format!(
                "vocabulary max_size must exceed {}, got {max_size}",
                RESERVED.len()
            )));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for text in corpus {
            for tok in split_tokens(text.as_ref()) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(tok, _)| !RESERVED.contains(tok))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());

        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Ok(Self::from_tokens(tokens, Spacing::Simple))
    }

    fn from_tokens(tokens: Vec<String>, spacing: Spacing) -> Self {
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            id_of,
            spacing,
        }
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

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        TokenSeq(
            split_tokens(text)
                .map(|tok| self.id_of(tok).unwrap_or(UNK))
                .collect(),
        )
    }

    pub fn decode(&self, seq: &[u32]) -> Result<String> {
        let mut out = String::new();
        let mut prev: Option<u32> = None;
        for &id in seq {
            let tok = self.token(id).ok_or(Error::InvalidTokenId {
                id,
                vocab_size: self.len(),
            })?;
            if let Some(p) = prev {
                if p != NEWLINE && id != NEWLINE {
                    out.push(' ');
                }
            }
            out.push_str(tok);
            prev = Some(id);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            version: VOCAB_FILE_VERSION,
            tokens: self.tokens.clone(),
            spacing: self.spacing,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        if file.version != VOCAB_FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported vocab version {}",
                file.version
            )));
        }
        if file.tokens.len() < RESERVED.len()
            || file.tokens[..RESERVED.len()]
                .iter()
                .zip(RESERVED)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Format("vocab is missing reserved tokens".into()));
        }
        let vocab = Self::from_tokens(file.tokens, file.spacing);
        if vocab.id_of.len() != vocab.tokens.len() {
            return Err(Error::Format("vocab contains duplicate tokens".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
