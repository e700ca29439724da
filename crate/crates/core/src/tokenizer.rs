//! Word-level tokenizer with reserved special tokens at the lowest ids.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS: usize = 2;
pub const QUERY: usize = 3;
pub const SEP_H: usize = 4;
pub const SEP_P: usize = 5;
pub const SEP_T: usize = 6;
pub const SEP_K: usize = 7;
pub const SEP_V: usize = 8;

pub const SEP_H_TOKEN: &str = "⟨H⟩";
pub const SEP_P_TOKEN: &str = "⟨P⟩";
pub const SEP_T_TOKEN: &str = "⟨T⟩";
pub const SEP_K_TOKEN: &str = "⟨K⟩";
pub const SEP_V_TOKEN: &str = "⟨V⟩";

/// Special tokens in id order.
pub const SPECIAL_TOKENS: [&str; 9] =
    ["<pad>", "<unk>", "</s>", "<query>", SEP_H_TOKEN, SEP_P_TOKEN, SEP_T_TOKEN, SEP_K_TOKEN, SEP_V_TOKEN];

const DETACHED: [char; 10] = ['.', ',', ';', ':', '!', '?', '(', ')', '"', '\''];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizerError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("min_freq must be at least 1")]
    ZeroMinFreq,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("vocabulary must start with the special tokens; line {line} is `{found}`")]
    MissingSpecial { line: usize, found: String },
    #[error("duplicate token `{0}` in vocabulary")]
    DuplicateToken(String),
}

/// Splits on whitespace and detaches `. , ; : ! ? ( ) " '` into their own tokens.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if SPECIAL_TOKENS.contains(&word) {
            out.push(word.to_string());
            continue;
        }
        let mut current = String::new();
        for ch in word.chars() {
            if DETACHED.contains(&ch) {
                if !current.is_empty() {
                    out.push(core::mem::take(&mut current));
                }
                out.push(ch.to_string());
            } else if lowercase {
                current.extend(ch.to_lowercase());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    lowercase: bool,
}

impl Vocab {
    /// Specials first, then every token seen at least `min_freq` times by
    /// descending frequency, ties broken lexicographically.
    pub fn build<'a, I>(corpus: I, min_freq: usize, lowercase: bool) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if min_freq == 0 {
            return Err(TokenizerError::ZeroMinFreq);
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for line in corpus {
            for tok in tokenize(line, lowercase) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(tok, n)| *n >= min_freq && !SPECIAL_TOKENS.contains(&tok.as_str())).collect();
        // BTreeMap iteration is lexicographic and the sort is stable.
        ranked.sort_by_key(|(_, n)| core::cmp::Reverse(*n));
        let tokens = SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(ranked.into_iter().map(|(t, _)| t)).collect();
        Self::from_tokens(tokens, lowercase)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Result<Self, TokenizerError> {
        for (line, special) in SPECIAL_TOKENS.iter().enumerate() {
            match tokens.get(line) {
                Some(t) if t == special => {}
                found => {
                    return Err(TokenizerError::MissingSpecial { line, found: found.cloned().unwrap_or_default() })
                }
            }
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TokenizerError::DuplicateToken(t.clone()));
            }
        }
        Ok(Vocab { tokens, index, lowercase })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str, TokenizerError> {
        self.tokens.get(id).map(String::as_str).ok_or(TokenizerError::IdOutOfRange { id, size: self.tokens.len() })
    }

    /// No EOS is appended.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text, self.lowercase).iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id)?);
        }
        Ok(out)
    }
}
