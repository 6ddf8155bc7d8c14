//! Text normalisation, vocabulary construction and token encoding.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 2500;

fn is_separator(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            c,
            '.' | ',' | ';' | ':' | '!' | '?' | '(' | ')' | '[' | ']' | '{' | '}' | '"' | '<' | '>'
                | '|' | '*' | '=' | '+' | '#' | '~' | '`'
        )
}

/// Splits on whitespace and punctuation, lowercases, drops every token that
/// contains anything other than `a`–`z`, and keeps at most `max_len` tokens.
///
/// Hyphens, apostrophes, slashes and digits do not split, so tokens such as
/// `follow-up` or `b12` are dropped whole.
pub fn preprocess(text: &str, max_len: usize) -> Vec<String> {
    text.split(is_separator)
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.bytes().all(|b| b.is_ascii_lowercase()))
        .take(max_len)
        .collect()
}

/// Token ↔ id mapping with PAD = 0 and UNK = 1 reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_frequency: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Result<Self> {
        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut token_to_id = HashMap::new();
        for t in tokens {
            if t.is_empty() || t == PAD_TOKEN || t == UNK_TOKEN {
                return Err(Error::invalid(format!("reserved or empty token {t:?}")));
            }
            if token_to_id.insert(t.clone(), id_to_token.len()).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
            id_to_token.push(t);
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            min_frequency,
        })
    }

    /// Total size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 2
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// One token per line, ids starting at 2; reserved ids are implicit.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.id_to_token[2..] {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::parse(
                    format!("line {}", i + 1),
                    format!("invalid vocabulary entry {line:?}"),
                ));
            }
            tokens.push(line);
        }
        Vocabulary::from_tokens(tokens, 1).map_err(|e| Error::parse("vocabulary", e.to_string()))
    }
}

/// Assigns ids to tokens seen at least `min_frequency` times, most frequent
/// first, ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(documents: &[Vec<S>], min_frequency: usize) -> Result<Vocabulary> {
    if min_frequency < 1 {
        return Err(Error::invalid("min_frequency must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in documents {
        for t in doc {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_frequency)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect(), min_frequency)
}

/// Maps tokens to ids, unknown tokens to UNK.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| vocab.id(t.as_ref()).unwrap_or(UNK_ID))
        .collect()
}

pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|&i| vocab.token(i).unwrap_or(UNK_TOKEN).to_string())
        .collect()
}
