//! Multi-user message/reply corpora: synthesis, preprocessing, splits.
//!
//! The generator produces emails from a small template grammar (greeting,
//! body, closing) over a shared base vocabulary. Every user additionally owns
//! a pool of phrases sampled from a global rare-phrase bank, and a
//! configurable fraction of their reply tokens comes from that pool. The pool
//! is what makes per-user n-gram vectors separable, which is the signal the
//! prompt model (and the attack) relies on.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hash;
use crate::rng::Rng;
use crate::text;

const LBL_RECORD: u64 = 0x01;
const LBL_POOL: u64 = 0x02;
const LBL_SPLIT: u64 = 0x03;

/// One message/reply pair owned by a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailRecord {
    pub user_id: String,
    pub message: String,
    pub reply: String,
}

impl EmailRecord {
    fn validate(&self) -> Result<(), Error> {
        if self.user_id.is_empty() {
            return Err(Error::InvalidConfig("record has empty user_id".into()));
        }
        if text::token_count(&self.message) == 0 || text::token_count(&self.reply) == 0 {
            return Err(Error::InvalidConfig(format!(
                "record for {:?} has an empty message or reply",
                self.user_id
            )));
        }
        Ok(())
    }
}

/// Immutable collection of records. Record order is part of the value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    records: Vec<EmailRecord>,
}

impl Corpus {
    pub fn from_records(records: Vec<EmailRecord>) -> Result<Self, Error> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for record in &records {
            record.validate()?;
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[EmailRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted distinct user ids.
    pub fn users(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.user_id.as_str()).collect();
        set.into_iter().map(|s| s.to_string()).collect()
    }

    pub fn records_for<'a>(&'a self, user_id: &'a str) -> impl Iterator<Item = &'a EmailRecord> {
        self.records.iter().filter(move |r| r.user_id == user_id)
    }

    /// Whitespace token count over all messages and replies.
    pub fn total_tokens(&self) -> usize {
        self.records
            .iter()
            .map(|r| text::token_count(&r.message) + text::token_count(&r.reply))
            .sum()
    }

    /// Word counts over all messages and replies, for vocabulary building.
    pub fn word_counts(&self) -> alloc::collections::BTreeMap<String, u64> {
        let mut counts = alloc::collections::BTreeMap::new();
        for record in &self.records {
            for word in text::tokenize(&record.message).chain(text::tokenize(&record.reply)) {
                *counts.entry(word.to_string()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = hash::Fnv1a::new();
        for r in &self.records {
            h.write_str(&r.user_id);
            h.write_str(&r.message);
            h.write_str(&r.reply);
        }
        h.finish()
    }
}

/// Knobs for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_users: usize,
    pub pairs_per_user: usize,
    /// Size of the shared base word pool (curated words plus generated filler).
    pub vocab_size: usize,
    /// Probability mass of reply tokens drawn from the user's phrase pool.
    pub user_style_strength: f64,
    /// Inclusive token-count range for messages.
    pub message_len: (usize, usize),
    /// Inclusive token-count range for replies.
    pub reply_len: (usize, usize),
    /// Size of the global phrase bank users sample their pools from. The bank
    /// itself is fixed across seeds so that corpora generated with different
    /// seeds share a word inventory (distinct users, same language).
    pub phrase_bank_size: usize,
    pub phrases_per_user: usize,
    /// Fraction of body tokens drawn from a large pool of rare words (names,
    /// ids, one-off jargon). Real email text has a long tail, and that tail
    /// is where memorization concentrates.
    pub rare_word_rate: f64,
    pub rare_pool_size: usize,
}

impl CorpusSpec {
    /// Desk-scale defaults used throughout the experiment harness.
    pub fn toy_default() -> Self {
        Self {
            n_users: 10,
            pairs_per_user: 60,
            vocab_size: 96,
            user_style_strength: 0.5,
            message_len: (4, 8),
            reply_len: (5, 9),
            phrase_bank_size: 48,
            phrases_per_user: 6,
            rare_word_rate: 0.2,
            rare_pool_size: 300,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n_users < 2 {
            return Err(Error::InvalidConfig("n_users must be >= 2".into()));
        }
        if self.pairs_per_user < 1 {
            return Err(Error::InvalidConfig("pairs_per_user must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.user_style_strength) {
            return Err(Error::InvalidConfig("user_style_strength must be in [0, 1]".into()));
        }
        if self.vocab_size < 16 {
            return Err(Error::InvalidConfig("vocab_size must be >= 16".into()));
        }
        if self.message_len.0 < 2 || self.message_len.0 > self.message_len.1 {
            return Err(Error::InvalidConfig("message_len range invalid (min >= 2)".into()));
        }
        if self.reply_len.0 < 3 || self.reply_len.0 > self.reply_len.1 {
            return Err(Error::InvalidConfig("reply_len range invalid (min >= 3)".into()));
        }
        if !(0.0..=1.0).contains(&self.rare_word_rate) {
            return Err(Error::InvalidConfig("rare_word_rate must be in [0, 1]".into()));
        }
        if self.rare_word_rate > 0.0 && self.rare_pool_size == 0 {
            return Err(Error::InvalidConfig("rare_word_rate > 0 needs a rare pool".into()));
        }
        if self.user_style_strength > 0.0 {
            if self.phrase_bank_size == 0 || self.phrases_per_user == 0 {
                return Err(Error::InvalidConfig(
                    "styled corpora need a non-empty phrase bank and per-user pool".into(),
                ));
            }
            if self.phrases_per_user > self.phrase_bank_size {
                return Err(Error::InvalidConfig(
                    "phrases_per_user cannot exceed phrase_bank_size".into(),
                ));
            }
        }
        Ok(())
    }
}

const GREETINGS: &[&str] = &["hi", "hello", "dear", "hey", "morning"];
const ACKS: &[&str] = &["thanks", "sure", "ok", "yes", "noted", "agreed"];
const CLOSINGS: &[&str] = &["regards", "best", "cheers", "soon"];

const CONTENT_WORDS: &[&str] = &[
    "the", "we", "you", "i", "a", "to", "for", "on", "in", "of", "and", "will", "can", "need",
    "please", "send", "review", "update", "meeting", "schedule", "report", "draft", "project",
    "team", "client", "budget", "plan", "today", "tomorrow", "week", "monday", "friday", "call",
    "notes", "file", "deck", "email", "time", "status", "follow", "next", "before", "after",
    "share", "check", "confirm", "list", "agenda", "invoice", "order", "release", "version",
    "test", "fix", "issue", "deadline", "office", "room", "board", "summary", "details",
    "question", "answer", "by", "with", "this", "that", "new", "final", "early", "late", "quick",
    "short", "sync", "feedback", "launch", "goal", "number", "scope", "owner",
];

// Disjoint syllable families keep generated filler words, bank words, and
// rare-tier words from ever colliding with each other or the curated list.
const FILLER_SYLLABLES: &[&str] = &["ta", "re", "mi", "no", "sa", "lu", "den", "kor", "pel", "vin"];
const BANK_SYLLABLES: &[&str] = &["zu", "vel", "qo", "xi", "war", "fy", "gon", "bry", "ulf", "maz"];
const RARE_SYLLABLES: &[&str] = &["pla", "stu", "gri", "dov", "tre", "bam", "clo", "fex", "hur", "jyn"];

fn nonce_word(syllables: &[&str], index: usize) -> String {
    let n = syllables.len();
    let mut word = String::new();
    word.push_str(syllables[(index / (n * n)) % n]);
    word.push_str(syllables[(index / n) % n]);
    word.push_str(syllables[index % n]);
    word
}

fn base_words(vocab_size: usize) -> Vec<&'static str> {
    CONTENT_WORDS.iter().copied().take(vocab_size).collect()
}

fn filler_words(vocab_size: usize) -> Vec<String> {
    let extra = vocab_size.saturating_sub(CONTENT_WORDS.len());
    (0..extra).map(|i| nonce_word(FILLER_SYLLABLES, i)).collect()
}

/// The global phrase bank. Fixed for a given size: independent of the seed,
/// so differently-seeded corpora describe different users speaking the same
/// language.
pub fn phrase_bank(size: usize) -> Vec<Vec<String>> {
    (0..size)
        .map(|i| {
            if i % 2 == 0 {
                alloc::vec![nonce_word(BANK_SYLLABLES, 2 * i)]
            } else {
                alloc::vec![nonce_word(BANK_SYLLABLES, 2 * i), nonce_word(BANK_SYLLABLES, 2 * i + 1)]
            }
        })
        .collect()
}

fn user_id_for(index: usize) -> String {
    format!("user-{index:03}")
}

struct Generator<'a> {
    base: Vec<&'a str>,
    filler: Vec<String>,
    rare: Vec<String>,
    rare_rate: f64,
}

impl Generator<'_> {
    fn content_word(&self, rng: &mut Rng) -> &str {
        if !self.rare.is_empty() && rng.bernoulli(self.rare_rate) {
            return &self.rare[rng.range(self.rare.len())];
        }
        // Squaring the uniform draw skews mass toward early (frequent) words,
        // giving the LM a Zipf-like distribution to learn.
        let total = self.base.len() + self.filler.len();
        let u = rng.next_f64();
        let idx = ((u * u) * total as f64) as usize;
        let idx = idx.min(total - 1);
        if idx < self.base.len() {
            self.base[idx]
        } else {
            &self.filler[idx - self.base.len()]
        }
    }
}

/// Deterministically generate a corpus from (spec, seed).
pub fn synthesize_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus, Error> {
    spec.validate()?;
    let generator = Generator {
        base: base_words(spec.vocab_size),
        filler: filler_words(spec.vocab_size),
        rare: (0..spec.rare_pool_size).map(|i| nonce_word(RARE_SYLLABLES, i)).collect(),
        rare_rate: spec.rare_word_rate,
    };
    let bank = phrase_bank(spec.phrase_bank_size);

    let mut records = Vec::with_capacity(spec.n_users * spec.pairs_per_user);
    for user in 0..spec.n_users {
        let user_id = user_id_for(user);
        let pool: Vec<&Vec<String>> = {
            let mut rng = Rng::derive(seed, &[LBL_POOL, user as u64]);
            rng.sample_indices(bank.len(), spec.phrases_per_user.min(bank.len()))
                .into_iter()
                .map(|i| &bank[i])
                .collect()
        };
        for pair in 0..spec.pairs_per_user {
            let mut rng = Rng::derive(seed, &[LBL_RECORD, user as u64, pair as u64]);
            let message = gen_message(spec, &generator, &mut rng);
            let reply = gen_reply(spec, &generator, &pool, &message, &mut rng);
            records.push(EmailRecord { user_id: user_id.clone(), message, reply });
        }
    }
    Corpus::from_records(records)
}

fn gen_message(spec: &CorpusSpec, generator: &Generator<'_>, rng: &mut Rng) -> String {
    let len = rng.range_inclusive(spec.message_len.0, spec.message_len.1);
    let mut words: Vec<&str> = Vec::with_capacity(len);
    words.push(GREETINGS[rng.range(GREETINGS.len())]);
    while words.len() < len {
        words.push(generator.content_word(rng));
    }
    words.join(" ")
}

/// Replies open with an ack, echo one content word of the message, then mix
/// base words with the user's phrases. The echo gives the corpus real
/// message-to-reply dependence: a base LM pretrained on it must attend to
/// the message, which keeps the attention pathway (the only route a prefix
/// prompt can act through) alive.
fn gen_reply(
    spec: &CorpusSpec,
    generator: &Generator<'_>,
    pool: &[&Vec<String>],
    message: &str,
    rng: &mut Rng,
) -> String {
    let len = rng.range_inclusive(spec.reply_len.0, spec.reply_len.1);
    let mut words: Vec<&str> = Vec::with_capacity(len + 1);
    words.push(ACKS[rng.range(ACKS.len())]);
    let content: Vec<&str> = crate::text::tokenize(message).skip(1).collect();
    if !content.is_empty() {
        words.push(content[rng.range(content.len())]);
    }
    while words.len() + 1 < len {
        if !pool.is_empty() && rng.bernoulli(spec.user_style_strength) {
            let phrase = pool[rng.range(pool.len())];
            for w in phrase {
                words.push(w.as_str());
            }
        } else {
            words.push(generator.content_word(rng));
        }
    }
    words.push(CLOSINGS[rng.range(CLOSINGS.len())]);
    words.join(" ")
}

/// Signature stripping applied at ingestion time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessRules {
    /// Lines from the first line equal to this delimiter onward are dropped.
    pub signature_delimiter: Option<String>,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        Self { signature_delimiter: Some("--".to_string()) }
    }
}

impl PreprocessRules {
    pub fn apply(&self, text: &str) -> String {
        match &self.signature_delimiter {
            None => text.to_string(),
            Some(delim) => {
                let kept: Vec<&str> = text
                    .lines()
                    .take_while(|line| line.trim() != delim.as_str())
                    .collect();
                kept.join("\n").trim_end().to_string()
            }
        }
    }
}

/// Result of a stratified split.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Corpus,
    pub test: Corpus,
    pub warnings: Vec<String>,
}

/// Per-user stratified split: floor(train_fraction * n) records per user go
/// to train, the rest to test. Users with fewer than 2 records contribute all
/// records to train (with a warning) so that every user exists at training
/// time. Record order within each side follows the input corpus.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<SplitOutcome, Error> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig("train_fraction must be in (0, 1)".into()));
    }
    let mut to_train = alloc::vec![false; corpus.len()];
    let mut warnings = Vec::new();

    for user in corpus.users() {
        let indices: Vec<usize> = corpus
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.user_id == user)
            .map(|(i, _)| i)
            .collect();
        let n = indices.len();
        if n < 2 {
            warnings.push(format!("user {user:?} has {n} record(s); all assigned to train"));
            for &i in &indices {
                to_train[i] = true;
            }
            continue;
        }
        let n_train = ((train_fraction * n as f64) as usize).min(n);
        let mut shuffled = indices.clone();
        let mut rng = Rng::derive(seed, &[LBL_SPLIT, hash::hash_strings([user.as_str()])]);
        rng.shuffle(&mut shuffled);
        for &i in shuffled.iter().take(n_train) {
            to_train[i] = true;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, record) in corpus.records().iter().enumerate() {
        if to_train[i] {
            train.push(record.clone());
        } else {
            test.push(record.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidConfig(
            "split produced an empty side; corpus too small for this fraction".into(),
        ));
    }
    Ok(SplitOutcome {
        train: Corpus::from_records(train)?,
        test: Corpus::from_records(test)?,
        warnings,
    })
}
