//! Token/id bijection with four reserved ids.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in order.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: Vec::with_capacity(RESERVED.len() + words.len()),
            index: HashMap::new(),
        };
        for t in RESERVED
            .iter()
            .copied()
            .chain(words.iter().map(AsRef::as_ref))
        {
            if v.index.insert(t.to_string(), v.tokens.len()).is_some() {
                return Err(Error::invalid(
                    "Vocabulary::new",
                    format!("duplicate token {t:?}"),
                ));
            }
            v.tokens.push(t.to_string());
        }
        Ok(v)
    }

    /// `size` ids total: the reserved tokens plus `{prefix}4`, `{prefix}5`, ...
    pub fn synthetic(prefix: &str, size: usize) -> Result<Self> {
        if size < RESERVED.len() {
            return Err(Error::Config(format!(
                "vocabulary size {size} leaves no room for reserved ids"
            )));
        }
        let words: Vec<String> = (RESERVED.len()..size)
            .map(|i| format!("{prefix}{i}"))
            .collect();
        Self::new(&words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace-tokenized text to ids, unknown words mapped to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
