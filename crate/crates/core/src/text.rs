//! Whitespace tokenization and the LM vocabulary.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hash;

pub type TokenId = u32;

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const SEP: &str = "<SEP>";
pub const EOS: &str = "<EOS>";

/// Split on whitespace; the only tokenization the pipeline performs.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn token_count(text: &str) -> usize {
    tokenize(text).count()
}

/// Closed vocabulary: specials at fixed ids, then words ordered by
/// (count desc, word asc) at build time. Out-of-vocabulary words encode
/// to `<UNK>`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, TokenId>,
}

impl Vocab {
    /// Build from word counts. `extra` words (canaries, etc.) are always
    /// included even when their corpus count would not make the cap.
    pub fn build<'a>(
        counts: impl IntoIterator<Item = (&'a str, u64)>,
        cap: usize,
        extra: &[String],
    ) -> Result<Self, Error> {
        let specials = [PAD, UNK, SEP, EOS];
        if cap < specials.len() + extra.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "vocab cap {cap} cannot fit {} special and {} extra tokens",
                specials.len(),
                extra.len()
            )));
        }
        let mut words: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
        for tok in extra {
            if !words.iter().any(|w| w == tok) {
                words.push(tok.clone());
            }
        }

        // BTreeMap gives lexicographic order; the stable sort then breaks
        // count ties in favor of the lexicographically smaller word.
        let mut ranked: Vec<(&str, u64)> = {
            let mut merged: BTreeMap<&str, u64> = BTreeMap::new();
            for (w, c) in counts {
                *merged.entry(w).or_insert(0) += c;
            }
            merged.into_iter().collect()
        };
        ranked.sort_by(|a, b| b.1.cmp(&a.1));

        for (word, _) in ranked {
            if words.len() >= cap {
                break;
            }
            if !word.is_empty() && !words.iter().any(|w| w == word) {
                words.push(word.to_string());
            }
        }
        Ok(Self::from_words(words))
    }

    /// Rebuild from an ordered word list (checkpoint loading). The first four
    /// entries must be the special tokens.
    pub fn from_word_list(words: Vec<String>) -> Result<Self, Error> {
        let expected = [PAD, UNK, SEP, EOS];
        if words.len() < expected.len() {
            return Err(Error::InvalidConfig("vocab shorter than special token set".into()));
        }
        for (i, s) in expected.iter().enumerate() {
            if words[i] != *s {
                return Err(Error::InvalidConfig(alloc::format!(
                    "vocab slot {i} must be {s}, found {:?}",
                    words[i]
                )));
            }
        }
        Ok(Self::from_words(words))
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        Self { words, index }
    }

    /// Restore the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn pad(&self) -> TokenId {
        0
    }

    pub fn unk(&self) -> TokenId {
        1
    }

    pub fn sep(&self) -> TokenId {
        2
    }

    pub fn eos(&self) -> TokenId {
        3
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> TokenId {
        self.id(word).unwrap_or(self.unk())
    }

    pub fn word(&self, id: TokenId) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).map(|w| self.id_or_unk(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.word(id));
        }
        out
    }

    pub fn fingerprint(&self) -> u64 {
        hash::hash_strings(self.words.iter().map(|s| s.as_str()))
    }
}
