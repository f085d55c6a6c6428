//! Canary injection and leak detection.
//!
//! Private tokens are inserted into a target user's training replies at
//! random positions, governed by two rates: the fraction of replies selected
//! and the per-reply insertion count relative to the reply's original
//! length. The injection ledger records exactly what went where, so audits
//! can reverse it and experiments can report the corpus-level density.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmailRecord};
use crate::error::Error;
use crate::math;
use crate::rng::Rng;
use crate::text::{self, TokenId};

/// Privacy experiment knobs for one target user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    /// Fraction of the user's replies that receive insertions, in [0, 1).
    pub alpha_reply: f64,
    /// Insertions per selected reply as a fraction of its original token
    /// length, in [0, 1). A selected reply always receives at least one.
    pub alpha_word: f64,
    /// Tokens drawn round-robin for each insertion.
    pub canary_tokens: Vec<String>,
    pub seed: u64,
    pub target_user: String,
}

impl PrivacyConfig {
    pub fn new(target_user: impl Into<String>, alpha_word: f64, alpha_reply: f64, seed: u64) -> Self {
        Self {
            alpha_reply,
            alpha_word,
            canary_tokens: alloc::vec!["appendage".to_string()],
            seed,
            target_user: target_user.into(),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(0.0..1.0).contains(&self.alpha_reply) {
            return Err(Error::InvalidConfig("alpha_reply must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.alpha_word) {
            return Err(Error::InvalidConfig("alpha_word must be in [0, 1)".into()));
        }
        if self.canary_tokens.is_empty() {
            return Err(Error::InvalidConfig("canary_tokens must be non-empty".into()));
        }
        if self
            .canary_tokens
            .iter()
            .any(|t| t.is_empty() || t.split_whitespace().count() != 1)
        {
            return Err(Error::InvalidConfig("each canary token must be one word".into()));
        }
        if self.target_user.is_empty() {
            return Err(Error::InvalidConfig("target_user must be non-empty".into()));
        }
        Ok(())
    }
}

/// What was inserted into one reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionRecord {
    /// Index into the record list handed to [`inject_canaries`].
    pub reply_index: usize,
    /// Token positions of the insertions in the lengthened reply, ascending.
    pub positions: Vec<usize>,
    /// Inserted tokens, parallel to `positions`.
    pub tokens: Vec<String>,
}

/// Number of replies selected for insertion: round(alpha_reply * n), with a
/// floor of one whenever alpha_reply is positive but rounds to zero.
pub fn selected_reply_count(n_replies: usize, alpha_reply: f64) -> usize {
    let rounded = math::round(alpha_reply * n_replies as f64) as usize;
    if alpha_reply > 0.0 && rounded == 0 && n_replies > 0 {
        1
    } else {
        rounded.min(n_replies)
    }
}

/// Insertions for one selected reply of original token length `len`:
/// max(1, round(alpha_word * len)).
pub fn insertion_count(original_len: usize, alpha_word: f64) -> usize {
    (math::round(alpha_word * original_len as f64) as usize).max(1)
}

/// Insert canary tokens into the target user's replies. Unselected replies
/// are returned byte-identical; selected replies are whitespace-normalized
/// token sequences with the insertions applied. The ledger is ordered by
/// reply index and lists final token positions, so deleting those positions
/// (descending) restores each original reply.
pub fn inject_canaries(
    records: &[EmailRecord],
    cfg: &PrivacyConfig,
) -> Result<(Vec<EmailRecord>, Vec<InjectionRecord>), Error> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(stranger) = records.iter().find(|r| r.user_id != cfg.target_user) {
        return Err(Error::InvalidConfig(alloc::format!(
            "record for {:?} passed to injection targeting {:?}",
            stranger.user_id,
            cfg.target_user
        )));
    }

    let mut rng = Rng::derive(cfg.seed, &[0xCA]);
    let selected = rng.sample_indices(records.len(), selected_reply_count(records.len(), cfg.alpha_reply));

    let mut out = records.to_vec();
    let mut ledger = Vec::with_capacity(selected.len());
    for &idx in &selected {
        let mut words: Vec<String> =
            text::tokenize(&out[idx].reply).map(|w| w.to_string()).collect();
        let original_len = words.len();
        let n_insert = insertion_count(original_len, cfg.alpha_word);
        let mut positions: Vec<usize> = Vec::with_capacity(n_insert);
        let mut tokens: Vec<String> = Vec::with_capacity(n_insert);
        for i in 0..n_insert {
            let pos = rng.range(words.len() + 1);
            let token = cfg.canary_tokens[i % cfg.canary_tokens.len()].clone();
            words.insert(pos, token.clone());
            for earlier in positions.iter_mut() {
                if *earlier >= pos {
                    *earlier += 1;
                }
            }
            positions.push(pos);
            tokens.push(token);
        }
        let mut paired: Vec<(usize, String)> = positions.into_iter().zip(tokens).collect();
        paired.sort_by_key(|(p, _)| *p);
        let (positions, tokens) = paired.into_iter().unzip();
        out[idx].reply = words.join(" ");
        ledger.push(InjectionRecord { reply_index: idx, positions, tokens });
    }
    Ok((out, ledger))
}

/// Reverse an injection using its ledger: delete the recorded positions.
pub fn strip_injections(records: &[EmailRecord], ledger: &[InjectionRecord]) -> Vec<EmailRecord> {
    let mut out = records.to_vec();
    for entry in ledger {
        let record = &mut out[entry.reply_index];
        let mut words: Vec<String> = text::tokenize(&record.reply).map(|w| w.to_string()).collect();
        for &pos in entry.positions.iter().rev() {
            if pos < words.len() {
                words.remove(pos);
            }
        }
        record.reply = words.join(" ");
    }
    out
}

/// True iff the canary token sequence appears contiguously in the output.
pub fn contains_leak(output_tokens: &[TokenId], canary_tokens: &[TokenId]) -> bool {
    if canary_tokens.is_empty() || output_tokens.len() < canary_tokens.len() {
        return false;
    }
    output_tokens
        .windows(canary_tokens.len())
        .any(|w| w == canary_tokens)
}

/// Inserted tokens as a fraction of all training tokens (messages and
/// replies, post-injection). Reported in run manifests so experiments can
/// confirm the sub-percent regime.
pub fn injection_density(corpus_train: &Corpus, ledger: &[InjectionRecord]) -> f64 {
    let inserted: usize = ledger.iter().map(|e| e.positions.len()).sum();
    if inserted == 0 {
        return 0.0;
    }
    inserted as f64 / corpus_train.total_tokens() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::text::Vocab;
    use alloc::vec;

    fn records_for(user: &str, n: usize) -> Vec<EmailRecord> {
        (0..n)
            .map(|i| EmailRecord {
                user_id: user.into(),
                message: alloc::format!("hello message {i}"),
                reply: alloc::format!("ok reply body {i} over"),
            })
            .collect()
    }

    #[test]
    fn selection_counts_follow_rounding() {
        assert_eq!(selected_reply_count(10, 0.3), 3);
        assert_eq!(selected_reply_count(10, 0.0), 0);
        assert_eq!(selected_reply_count(10, 0.25), 3); // round(2.5) away from zero
        assert_eq!(selected_reply_count(3, 0.1), 1); // floor-to-one
        assert_eq!(selected_reply_count(0, 0.5), 0);
    }

    #[test]
    fn insertion_counts_follow_rounding() {
        assert_eq!(insertion_count(20, 0.2), 4);
        assert_eq!(insertion_count(20, 0.0), 1); // at least one per selected reply
        assert_eq!(insertion_count(3, 0.1), 1);
        assert_eq!(insertion_count(10, 0.25), 3);
    }

    #[test]
    fn exact_reply_and_token_counts() {
        let records = records_for("user-000", 10);
        let cfg = PrivacyConfig::new("user-000", 0.2, 0.3, 7);
        let (modified, ledger) = inject_canaries(&records, &cfg).unwrap();
        assert_eq!(ledger.len(), 3);
        for entry in &ledger {
            // Original replies have 5 tokens: round(0.2 * 5) = 1.
            assert_eq!(entry.positions.len(), 1);
            assert_eq!(entry.tokens, vec!["appendage".to_string()]);
            let got = crate::text::token_count(&modified[entry.reply_index].reply);
            assert_eq!(got, 6);
        }
        // Unselected replies byte-identical.
        let touched: Vec<usize> = ledger.iter().map(|e| e.reply_index).collect();
        for (i, (orig, new)) in records.iter().zip(&modified).enumerate() {
            if touched.contains(&i) {
                assert_ne!(orig.reply, new.reply);
            } else {
                assert_eq!(orig, new);
            }
        }
    }

    #[test]
    fn alpha_reply_zero_is_identity() {
        let records = records_for("user-000", 5);
        let cfg = PrivacyConfig::new("user-000", 0.4, 0.0, 3);
        let (modified, ledger) = inject_canaries(&records, &cfg).unwrap();
        assert!(ledger.is_empty());
        assert_eq!(records, modified);
    }

    #[test]
    fn injection_is_deterministic_and_seed_sensitive() {
        let records = records_for("user-000", 8);
        let cfg = PrivacyConfig::new("user-000", 0.3, 0.5, 11);
        let (a, la) = inject_canaries(&records, &cfg).unwrap();
        let (b, lb) = inject_canaries(&records, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let other = PrivacyConfig { seed: 12, ..cfg };
        let (c, lc) = inject_canaries(&records, &other).unwrap();
        // Counts identical across seeds, placement generally not.
        assert_eq!(la.len(), lc.len());
        assert_ne!((a, la), (c, lc));
    }

    #[test]
    fn ledger_reverses_injection_exactly() {
        let records = records_for("user-000", 12);
        let cfg = PrivacyConfig {
            canary_tokens: vec!["zephyr".into(), "quill".into()],
            ..PrivacyConfig::new("user-000", 0.45, 0.6, 23)
        };
        let (modified, ledger) = inject_canaries(&records, &cfg).unwrap();
        let restored = strip_injections(&modified, &ledger);
        assert_eq!(records, restored);
    }

    #[test]
    fn round_robin_cycles_canary_tokens() {
        let records = vec![EmailRecord {
            user_id: "user-000".into(),
            message: "hello there friend".into(),
            reply: "a b c d e f g h i j".into(),
        }];
        let cfg = PrivacyConfig {
            canary_tokens: vec!["zephyr".into(), "quill".into()],
            ..PrivacyConfig::new("user-000", 0.3, 0.9, 5)
        };
        // 10 tokens, alpha_word 0.3 -> 3 insertions: zephyr, quill, zephyr.
        let (_, ledger) = inject_canaries(&records, &cfg).unwrap();
        let mut counts = (0, 0);
        for tok in &ledger[0].tokens {
            if tok == "zephyr" {
                counts.0 += 1;
            } else {
                counts.1 += 1;
            }
        }
        assert_eq!((counts.0, counts.1), (2, 1));
    }

    #[test]
    fn foreign_records_are_rejected() {
        let mut records = records_for("user-000", 3);
        records.push(records_for("user-001", 1).pop().unwrap());
        let cfg = PrivacyConfig::new("user-000", 0.2, 0.5, 1);
        assert!(matches!(inject_canaries(&records, &cfg), Err(Error::InvalidConfig(_))));
        assert!(matches!(inject_canaries(&[], &cfg), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn invalid_alphas_are_rejected() {
        assert!(PrivacyConfig::new("u", 1.0, 0.3, 1).validate().is_err());
        assert!(PrivacyConfig::new("u", 0.2, -0.1, 1).validate().is_err());
        let mut cfg = PrivacyConfig::new("u", 0.2, 0.3, 1);
        cfg.canary_tokens = vec![];
        assert!(cfg.validate().is_err());
        cfg.canary_tokens = vec!["two words".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn counts_hold_over_random_draws() {
        // Property sweep: counts match the rounding rules exactly and the
        // ledger always reverses the injection.
        let mut rng = Rng::new(99);
        for trial in 0..200 {
            let n = 1 + rng.range(30);
            let alpha_reply = rng.next_f64() * 0.999;
            let alpha_word = rng.next_f64() * 0.999;
            let records: Vec<EmailRecord> = (0..n)
                .map(|i| {
                    let len = 1 + rng.range(25);
                    let body: Vec<String> =
                        (0..len).map(|j| alloc::format!("w{i}x{j}")).collect();
                    EmailRecord {
                        user_id: "user-000".into(),
                        message: "hello body".into(),
                        reply: body.join(" "),
                    }
                })
                .collect();
            let cfg = PrivacyConfig::new("user-000", alpha_word, alpha_reply, trial as u64);
            let (modified, ledger) = inject_canaries(&records, &cfg).unwrap();
            assert_eq!(ledger.len(), selected_reply_count(n, alpha_reply), "trial {trial}");
            for entry in &ledger {
                let original_len = crate::text::token_count(&records[entry.reply_index].reply);
                assert_eq!(entry.positions.len(), insertion_count(original_len, alpha_word));
                assert!(entry.positions.windows(2).all(|w| w[0] < w[1] || w[0] == w[1]));
                let new_len = crate::text::token_count(&modified[entry.reply_index].reply);
                assert_eq!(new_len, original_len + entry.positions.len());
                assert!(entry.positions.iter().all(|&p| p < new_len));
            }
            assert_eq!(strip_injections(&modified, &ledger), records);
        }
    }

    #[test]
    fn leak_detection_requires_contiguity() {
        let vocab = Vocab::build(
            [
                ("please", 1),
                ("see", 1),
                ("appendage", 1),
                ("report", 1),
                ("zephyr", 1),
                ("note", 1),
                ("quill", 1),
            ],
            16,
            &[],
        )
        .unwrap();
        let single = vocab.encode("appendage");
        assert!(contains_leak(&vocab.encode("please see appendage report"), &single));
        assert!(!contains_leak(&vocab.encode("please see report"), &single));
        let pair = vocab.encode("zephyr quill");
        assert!(!contains_leak(&vocab.encode("zephyr note quill"), &pair));
        assert!(contains_leak(&vocab.encode("note zephyr quill note"), &pair));
        assert!(!contains_leak(&[], &single));
    }

    #[test]
    fn density_matches_arithmetic() {
        // 39,960 corpus tokens + 40 insertions = 40,000 total: density 0.001.
        let body: Vec<String> = (0..995).map(|i| alloc::format!("w{i}")).collect();
        let records: Vec<EmailRecord> = (0..40)
            .map(|_| EmailRecord {
                user_id: "user-000".into(),
                message: "hello there msg".into(),
                reply: body.join(" "),
            })
            .collect();
        // 40 records x (3 msg + 995 reply) = 39,920... pad with one more word.
        let records: Vec<EmailRecord> = records
            .into_iter()
            .map(|mut r| {
                r.message = "hello there msg x".into();
                r
            })
            .collect();
        let cfg = PrivacyConfig::new("user-000", 0.001, 0.999, 9);
        let (modified, ledger) = inject_canaries(&records, &cfg).unwrap();
        let inserted: usize = ledger.iter().map(|e| e.positions.len()).sum();
        assert_eq!(inserted, 40); // all 40 replies selected, 1 token each
        let corpus = Corpus::from_records(modified).unwrap();
        assert_eq!(corpus.total_tokens(), 40_000);
        let density = injection_density(&corpus, &ledger);
        assert!((density - 0.001).abs() < 1e-12, "density {density}");

        assert_eq!(injection_density(&corpus, &[]), 0.0);
    }
}
