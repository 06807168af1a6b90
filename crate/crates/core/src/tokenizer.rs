//! Word-level vocabulary construction and text-to-id encoding.
//!
//! The token rule is: lowercase the text, then take maximal runs of Unicode
//! letters and digits; punctuation is discarded.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Immutable token-to-id mapping with reserved PAD (0) and UNK (1) ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

/// Bounded token-id sequence; `length` counts the non-pad prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub length: usize,
}

/// Lowercases and splits into maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl Vocabulary {
    /// Builds a vocabulary from training texts. Tokens with corpus frequency
    /// at least `min_freq` are kept, ordered by descending frequency with a
    /// lexicographic tie-break, and the whole table (specials included) is
    /// truncated to `max_size`.
    pub fn build(texts: &[String], min_freq: usize, max_size: usize) -> Result<Self> {
        if min_freq < 1 {
            return Err(Error::invalid("min_freq must be at least 1"));
        }
        if max_size < 2 {
            return Err(Error::invalid("max_size must be at least 2"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for token in tokenize(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_freq)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - 2);

        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        Ok(Self::from_tokens(id_to_token))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Encodes a text into a fixed-width id sequence: out-of-vocabulary
    /// tokens map to UNK, the sequence is truncated to `max_len` and padded
    /// with PAD.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        if max_len < 1 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::invalid(format!(
                "text has no tokens after normalization: {text:?}"
            )));
        }
        let length = tokens.len().min(max_len);
        let mut ids: Vec<usize> = tokens
            .iter()
            .take(length)
            .map(|t| self.id_of(t).unwrap_or(UNK_ID))
            .collect();
        ids.resize(max_len, PAD_ID);
        Ok(TokenSequence { ids, length })
    }

    /// Writes one token per line; line number equals id.
    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        for token in &self.id_to_token {
            sink.write_all(token.as_bytes())?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load<R: Read>(source: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in BufReader::new(source).lines() {
            tokens.push(line?);
        }
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::invalid(
                "vocabulary file must start with <pad> and <unk> sentinels",
            ));
        }
        Ok(Self::from_tokens(tokens))
    }
}
