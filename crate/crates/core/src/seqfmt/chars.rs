//! Character-level text tokenizer.

use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Symbols in id order. The separator id is reserved separately by the vocabulary.
pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz 0123456789.,;:'!?-";

#[derive(Debug, Clone)]
pub struct CharTokenizer {
    vocab: Vocabulary,
    table: [Option<TokenId>; 128],
    symbols: Vec<char>,
}

impl CharTokenizer {
    pub fn new(vocab: &Vocabulary) -> Result<Self> {
        let symbols: Vec<char> = ALPHABET.chars().collect();
        // Last text id is the separator.
        if symbols.len() + 1 > vocab.text_size() {
            return Err(Error::InvalidConfig(format!(
                "text vocabulary of {} ids cannot hold {} symbols plus the separator",
                vocab.text_size(),
                symbols.len()
            )));
        }
        let mut table = [None; 128];
        for (i, &c) in symbols.iter().enumerate() {
            table[c as usize] = Some(i as TokenId);
        }
        Ok(CharTokenizer {
            vocab: *vocab,
            table,
            symbols,
        })
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .map(|c| {
                let c = c.to_ascii_lowercase();
                (c.is_ascii())
                    .then(|| self.table[c as usize])
                    .flatten()
                    .ok_or_else(|| Error::Encoding(format!("character {c:?} is not in the alphabet")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| {
                if id == self.vocab.separator() {
                    '|'
                } else {
                    self.symbols.get(id as usize).copied().unwrap_or('\u{fffd}')
                }
            })
            .collect()
    }
}
