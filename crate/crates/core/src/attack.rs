//! Black-box inference attacks against a trained pipeline.
//!
//! The attacker builds (or already has) the target user's n-gram feature
//! vector, turns it into a prefix through the shared prompt model, and
//! queries the pipeline with randomly drawn messages, counting how often the
//! decoded replies contain the canary. A first-person attacker knows the
//! true vector; a third-person attacker reconstructs it from a collected
//! fraction of the user's replies, so first-person is exactly the
//! third-person attack at full collection.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canary::{contains_leak, PrivacyConfig};
use crate::corpus::EmailRecord;
use crate::error::Error;
use crate::featurizer::{cosine, partial_vector, UserFeatureVector};
use crate::hash;
use crate::math;
use crate::pipeline::decode::{self, DecodingConfig};
use crate::pipeline::prompt::prompt_from_vector;
use crate::rng::Rng;
use crate::text::TokenId;
use crate::trainer::TrainedPipeline;

const LBL_COLLECT: u64 = 0xC0;
const LBL_REP: u64 = 0x9E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    FirstPerson,
    ThirdPerson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Fraction of the target's replies the attacker has collected.
    /// Ignored for first-person attacks (treated as 1).
    pub beta: f64,
    pub n_queries: usize,
    pub repetitions: usize,
    pub decoding: DecodingConfig,
    pub seed: u64,
}

impl AttackConfig {
    pub fn first_person(n_queries: usize, repetitions: usize, decoding: DecodingConfig, seed: u64) -> Self {
        Self { kind: AttackKind::FirstPerson, beta: 1.0, n_queries, repetitions, decoding, seed }
    }

    pub fn third_person(
        beta: f64,
        n_queries: usize,
        repetitions: usize,
        decoding: DecodingConfig,
        seed: u64,
    ) -> Self {
        Self { kind: AttackKind::ThirdPerson, beta, n_queries, repetitions, decoding, seed }
    }

    pub fn effective_beta(&self) -> f64 {
        match self.kind {
            AttackKind::FirstPerson => 1.0,
            AttackKind::ThirdPerson => self.beta,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n_queries == 0 {
            return Err(Error::InvalidConfig("n_queries must be >= 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig("beta must be in [0, 1]".into()));
        }
        self.decoding.validate()
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::FirstPerson,
            beta: 1.0,
            n_queries: 500,
            repetitions: 5,
            decoding: DecodingConfig::default(),
            seed: 0,
        }
    }
}

/// Outcome of one attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Leaked-query fraction per repetition.
    pub repetition_rates: Vec<f64>,
    /// Arithmetic mean of the repetition rates.
    pub mean_rate: f64,
    /// Cosine similarity between the attack vector and the stored true
    /// vector (1 for first-person by construction).
    pub attack_vector_cosine: f64,
    /// Fingerprint of the attacked pipeline, hex-encoded.
    pub checkpoint_id: String,
    pub config: AttackConfig,
    pub privacy: PrivacyConfig,
}

/// Uniformly collect round(beta * n) of the target's replies (seeded).
pub fn collect_partial(records: &[EmailRecord], beta: f64, seed: u64) -> Vec<String> {
    let take = math::round(beta * records.len() as f64) as usize;
    let take = take.min(records.len());
    let mut rng = Rng::derive(seed, &[LBL_COLLECT]);
    rng.sample_indices(records.len(), take)
        .into_iter()
        .map(|i| records[i].reply.clone())
        .collect()
}

/// Fraction of decoded outputs containing the canary sequence.
pub fn leakage_rate(outputs: &[Vec<TokenId>], canary_tokens: &[TokenId]) -> Result<f64, Error> {
    if outputs.is_empty() {
        return Err(Error::EmptyOutputs);
    }
    let leaked = outputs.iter().filter(|o| contains_leak(o, canary_tokens)).count();
    Ok(leaked as f64 / outputs.len() as f64)
}

fn canary_token_ids(pipeline: &TrainedPipeline, privacy: &PrivacyConfig) -> Result<Vec<TokenId>, Error> {
    privacy
        .canary_tokens
        .iter()
        .map(|word| {
            pipeline
                .lm
                .vocab
                .id(word)
                .filter(|&id| id != pipeline.lm.vocab.unk())
                .ok_or_else(|| Error::TokenNotInVocab(word.clone()))
        })
        .collect()
}

/// Run the attack: build the attack vector, derive the prefix, decode
/// `repetitions x n_queries` replies to seeded random query messages, and
/// count canary leaks.
///
/// `target_records` are the target user's training records as the pipeline
/// saw them (canaries included); the third-person attacker collects replies
/// from them. `query_messages` should come from held-out data.
pub fn run_attack(
    pipeline: &TrainedPipeline,
    cfg: &AttackConfig,
    privacy: &PrivacyConfig,
    target_records: &[EmailRecord],
    query_messages: &[String],
) -> Result<LeakageReport, Error> {
    cfg.validate()?;
    privacy.validate()?;
    if query_messages.is_empty() {
        return Err(Error::InvalidConfig("query_messages must be non-empty".into()));
    }
    let canary_ids = canary_token_ids(pipeline, privacy)?;
    let true_vector = pipeline
        .user_vectors
        .get(&privacy.target_user)
        .ok_or_else(|| Error::MissingUserVector(privacy.target_user.clone()))?;

    let attack_vector: UserFeatureVector = match cfg.kind {
        AttackKind::FirstPerson => true_vector.clone(),
        AttackKind::ThirdPerson => {
            if target_records.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            let replies = collect_partial(target_records, cfg.effective_beta(), cfg.seed);
            partial_vector(&replies, &pipeline.dict)
        }
    };
    let prefix = prompt_from_vector(&attack_vector, &pipeline.prompt_model)?;
    let similarity = cosine(&attack_vector.values, &true_vector.values);

    let mut repetition_rates = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let mut rng = Rng::derive(cfg.seed, &[LBL_REP, rep as u64]);
        let mut outputs = Vec::with_capacity(cfg.n_queries);
        for _ in 0..cfg.n_queries {
            let message = &query_messages[rng.range(query_messages.len())];
            let tokens = pipeline.lm.vocab.encode(message);
            let reply = decode::decode_reply(Some(&prefix), &tokens, &pipeline.lm, &cfg.decoding)?;
            outputs.push(reply);
        }
        repetition_rates.push(leakage_rate(&outputs, &canary_ids)?);
    }
    let mean_rate = repetition_rates.iter().sum::<f64>() / repetition_rates.len() as f64;

    Ok(LeakageReport {
        repetition_rates,
        mean_rate,
        attack_vector_cosine: similarity,
        checkpoint_id: hash::hex(pipeline.fingerprint()),
        config: cfg.clone(),
        privacy: privacy.clone(),
    })
}
