//! Top-k n-gram dictionary and per-user frequency vectors.
//!
//! The dictionary ranks all n-grams of order 1..=max_n pooled into one list,
//! by count descending with lexicographic tie-break, so two builds over the
//! same corpus agree entry for entry. User vectors count dictionary hits in
//! the user's text and L1-normalize over those hits; all counting is integer
//! until the single final division, so a vector is a pure function of the
//! token multiset (text order never changes the bits).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmailRecord};
use crate::error::Error;
use crate::hash;
use crate::math;
use crate::text;

/// Which of a user's text feeds their feature vector.
///
/// `RepliesOnly` is the default: it makes a third-person attacker who has
/// collected every reply reconstruct exactly the vector the provider uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorScope {
    RepliesOnly,
    All,
}

impl Default for VectorScope {
    fn default() -> Self {
        VectorScope::RepliesOnly
    }
}

/// Ordered list of the corpus's top-k n-grams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramDictionary {
    entries: Vec<Vec<String>>,
    k_requested: usize,
    max_n: usize,
}

impl NGramDictionary {
    pub fn entries(&self) -> &[Vec<String>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn k_requested(&self) -> usize {
        self.k_requested
    }

    /// True when the corpus had fewer distinct n-grams than requested.
    pub fn is_truncated(&self) -> bool {
        self.entries.len() < self.k_requested
    }

    /// Stable id tying vectors to the dictionary that produced them.
    pub fn id(&self) -> u64 {
        let mut h = hash::Fnv1a::new();
        h.write_u64(self.max_n as u64);
        for entry in &self.entries {
            h.write_u64(entry.len() as u64);
            for word in entry {
                h.write_str(word);
            }
        }
        h.finish()
    }

    /// Rebuild from an ordered entry list (the on-disk text format).
    pub fn from_entries(entries: Vec<Vec<String>>, max_n: usize) -> Result<Self, Error> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("dictionary has no entries".into()));
        }
        for e in &entries {
            if e.is_empty() || e.len() > max_n {
                return Err(Error::InvalidConfig("dictionary entry order out of range".into()));
            }
        }
        let k = entries.len();
        Ok(Self { entries, k_requested: k, max_n })
    }

    fn index(&self) -> BTreeMap<&[String], usize> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_slice(), i))
            .collect()
    }
}

/// A user's L1-normalized dictionary-hit frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFeatureVector {
    pub values: Vec<f64>,
    pub dictionary_id: u64,
}

impl UserFeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Cosine similarity; zero vectors compare as 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (math::sqrt(na) * math::sqrt(nb))
}

fn count_ngrams_into(counts: &mut BTreeMap<Vec<String>, u64>, text: &str, max_n: usize) {
    let words: Vec<&str> = text::tokenize(text).collect();
    for n in 1..=max_n {
        if words.len() < n {
            break;
        }
        for window in words.windows(n) {
            let key: Vec<String> = window.iter().map(|w| w.to_string()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
}

/// Top-k n-grams over raw texts; count descending, ties lexicographic.
pub fn build_dictionary_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    k: usize,
    max_n: usize,
) -> Result<NGramDictionary, Error> {
    if k == 0 {
        return Err(Error::InvalidConfig("dictionary size k must be >= 1".into()));
    }
    if max_n == 0 {
        return Err(Error::InvalidConfig("max_n must be >= 1".into()));
    }
    let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for text in texts {
        count_ngrams_into(&mut counts, text, max_n);
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    // BTreeMap iteration is lexicographic; the stable sort preserves that
    // order within equal counts.
    let mut ranked: Vec<(Vec<String>, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    let entries: Vec<Vec<String>> = ranked.into_iter().take(k).map(|(e, _)| e).collect();
    Ok(NGramDictionary { entries, k_requested: k, max_n })
}

/// Dictionary over every user's messages and replies.
pub fn build_dictionary(corpus: &Corpus, k: usize, max_n: usize) -> Result<NGramDictionary, Error> {
    let texts = corpus
        .records()
        .iter()
        .flat_map(|r| [r.message.as_str(), r.reply.as_str()]);
    build_dictionary_from_texts(texts, k, max_n)
}

fn vector_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    dict: &NGramDictionary,
) -> UserFeatureVector {
    let index = dict.index();
    let mut hits = alloc::vec![0u64; dict.len()];
    for text in texts {
        let words: Vec<&str> = text::tokenize(text).collect();
        for n in 1..=dict.max_n() {
            if words.len() < n {
                break;
            }
            for window in words.windows(n) {
                let key: Vec<String> = window.iter().map(|w| w.to_string()).collect();
                if let Some(&i) = index.get(key.as_slice()) {
                    hits[i] += 1;
                }
            }
        }
    }
    let total: u64 = hits.iter().sum();
    let values = if total == 0 {
        alloc::vec![0.0; dict.len()]
    } else {
        hits.iter().map(|&h| h as f64 / total as f64).collect()
    };
    UserFeatureVector { values, dictionary_id: dict.id() }
}

/// The provider-side signal for one user.
pub fn user_vector(
    records: &[EmailRecord],
    dict: &NGramDictionary,
    scope: VectorScope,
) -> UserFeatureVector {
    let texts: Vec<&str> = records
        .iter()
        .flat_map(|r| match scope {
            VectorScope::RepliesOnly => alloc::vec![r.reply.as_str()],
            VectorScope::All => alloc::vec![r.message.as_str(), r.reply.as_str()],
        })
        .collect();
    vector_from_texts(texts, dict)
}

/// The attacker-side reconstruction from collected replies. Identical
/// computation to [`user_vector`] over the collected subset.
pub fn partial_vector(collected_replies: &[String], dict: &NGramDictionary) -> UserFeatureVector {
    vector_from_texts(collected_replies.iter().map(|s| s.as_str()), dict)
}
