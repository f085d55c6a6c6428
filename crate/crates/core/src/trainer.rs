//! Training and evaluation for the reply pipeline.
//!
//! Two modes share one loop:
//!
//! * `FineTune` updates every LM weight and disables the prefix path —
//!   plain `<MSG> -> <REPLY>` conditioning. Also used to pretrain the base
//!   LM on a public corpus.
//! * `PromptTune` freezes the LM bit-for-bit and updates only the prompt
//!   MLP; gradients flow through the frozen LM into the prefix rows.
//!
//! The loss is cross-entropy restricted to reply tokens and the closing
//! `<EOS>`; message and `<SEP>` positions never contribute.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmailRecord};
use crate::error::Error;
use crate::featurizer::{NGramDictionary, UserFeatureVector};
use crate::hash;
use crate::math;
use crate::nn::{self, AdamW};
use crate::pipeline::lm::LmParams;
use crate::pipeline::prompt::PromptModelParams;
use crate::pipeline::PrefixPrompt;
use crate::rng::Rng;
use crate::text::{TokenId, Vocab};

const LBL_EPOCH: u64 = 0x45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    FineTune,
    PromptTune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// 0 is valid and returns the input pipeline unchanged.
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    /// Message token cap.
    pub source_len: usize,
    /// Reply token cap.
    pub target_len: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Hyperparameters at the scale of a large pretrained LM. Kept for
    /// reference and config files; far too conservative for the toy LM.
    pub fn paper_default(mode: TrainMode) -> Self {
        Self {
            mode,
            epochs: 5,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            warmup_steps: 500,
            batch_size: 16,
            source_len: 150,
            target_len: 50,
            seed: 0,
        }
    }

    /// Desk-scale defaults matched to the small LM.
    pub fn toy_default(mode: TrainMode) -> Self {
        Self {
            mode,
            epochs: 12,
            learning_rate: 3e-3,
            weight_decay: 0.01,
            warmup_steps: 50,
            batch_size: 16,
            source_len: 32,
            target_len: 16,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.source_len == 0 || self.target_len == 0 {
            return Err(Error::InvalidConfig("token caps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to serve (and audit) one trained pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub lm: LmParams,
    pub prompt_model: PromptModelParams,
    pub dict: NGramDictionary,
    pub user_vectors: BTreeMap<String, UserFeatureVector>,
    pub train_config: TrainConfig,
}

impl TrainedPipeline {
    pub fn validate(&self) -> Result<(), Error> {
        self.lm.validate()?;
        self.prompt_model.validate()?;
        if self.prompt_model.config.model_dim != self.lm.config.model_dim {
            return Err(Error::ShapeMismatch {
                expected: self.lm.config.model_dim,
                got: self.prompt_model.config.model_dim,
            });
        }
        for (user, vector) in &self.user_vectors {
            if vector.dim() != self.prompt_model.input_dim() {
                return Err(Error::InvalidConfig(alloc::format!(
                    "vector for {user:?} has dim {}, prompt model expects {}",
                    vector.dim(),
                    self.prompt_model.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Identity of the full parameter set; changes iff any weight, the
    /// dictionary, or a stored vector changes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = hash::Fnv1a::new();
        h.write_u64(self.lm.fingerprint());
        h.write_u64(self.prompt_model.fingerprint());
        h.write_u64(self.dict.id());
        for (user, vector) in &self.user_vectors {
            h.write_str(user);
            h.write_f64s(&vector.values);
        }
        h.finish()
    }

    /// Prefix for one stored user, or an error naming the missing user.
    pub fn prefix_for(&self, user_id: &str) -> Result<PrefixPrompt, Error> {
        let vector = self
            .user_vectors
            .get(user_id)
            .ok_or_else(|| Error::MissingUserVector(user_id.into()))?;
        crate::pipeline::prompt::prompt_from_vector(vector, &self.prompt_model)
    }
}

/// Tokenized training example with its target mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub tokens: Vec<TokenId>,
    /// mask[j] is true iff tokens[j] is a loss target (reply tokens, <EOS>).
    pub mask: Vec<bool>,
}

/// `truncate(message) <SEP> truncate(reply) <EOS>`, with the mask set on the
/// reply and `<EOS>` positions only. Returns None when either side is empty
/// after tokenization/truncation.
pub fn make_training_example(
    record: &EmailRecord,
    vocab: &Vocab,
    source_len: usize,
    target_len: usize,
) -> Option<TrainingExample> {
    let mut msg = vocab.encode(&record.message);
    msg.truncate(source_len);
    let mut reply = vocab.encode(&record.reply);
    reply.truncate(target_len);
    if msg.is_empty() || reply.is_empty() {
        return None;
    }
    let mut tokens = Vec::with_capacity(msg.len() + reply.len() + 2);
    let mut mask = Vec::with_capacity(msg.len() + reply.len() + 2);
    tokens.extend_from_slice(&msg);
    mask.extend(core::iter::repeat(false).take(msg.len()));
    tokens.push(vocab.sep());
    mask.push(false);
    tokens.extend_from_slice(&reply);
    mask.extend(core::iter::repeat(true).take(reply.len()));
    tokens.push(vocab.eos());
    mask.push(true);
    Some(TrainingExample { tokens, mask })
}

/// Logit-row positions and their target tokens under the mask. Position `p`
/// means "logits after reading tokens[p] score the target tokens[p+1]".
fn loss_targets(example: &TrainingExample) -> (Vec<usize>, Vec<TokenId>) {
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for j in 1..example.tokens.len() {
        if example.mask[j] {
            positions.push(j - 1);
            targets.push(example.tokens[j]);
        }
    }
    (positions, targets)
}

/// Masked cross-entropy over a full logits array (`logits[t]` scores
/// `tokens[t+1]`). Returns (summed loss, target count). Positions with
/// mask false contribute nothing, so editing their labels cannot change
/// the result.
pub fn masked_cross_entropy(
    logits: &[Vec<f64>],
    tokens: &[TokenId],
    mask: &[bool],
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for j in 1..tokens.len() {
        if mask[j] {
            let lp = nn::log_softmax(&logits[j - 1]);
            sum -= lp[tokens[j] as usize];
            count += 1;
        }
    }
    (sum, count)
}

struct ExamplePass {
    loss_sum: f64,
    count: usize,
    correct: usize,
}

/// Forward loss at masked positions only; optionally fills `d_logits` with
/// the gradient of the summed loss.
fn example_pass(
    lm: &LmParams,
    prefix: Option<&PrefixPrompt>,
    example: &TrainingExample,
    mut d_logits: Option<&mut Vec<(usize, Vec<f64>)>>,
) -> Result<(ExamplePass, Option<crate::pipeline::lm::ForwardCache>), Error> {
    let (positions, targets) = loss_targets(example);
    let (logits, cache) = lm.forward_logits_at(prefix, &example.tokens, &positions)?;
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for ((row, &target), &pos) in logits.iter().zip(&targets).zip(&positions) {
        let lp = nn::log_softmax(row);
        loss_sum -= lp[target as usize];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(core::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if argmax == target as usize {
            correct += 1;
        }
        if let Some(buf) = d_logits.as_deref_mut() {
            let mut grad = nn::softmax(row);
            grad[target as usize] -= 1.0;
            buf.push((pos, grad));
        }
    }
    let pass = ExamplePass { loss_sum, count: targets.len(), correct };
    Ok((pass, if d_logits.is_some() { Some(cache) } else { None }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean masked cross-entropy per epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
    /// Records dropped because message or reply was empty after truncation.
    pub skipped_records: usize,
}

pub struct TrainOutcome {
    pub pipeline: TrainedPipeline,
    /// Pipeline states captured after the requested epoch counts.
    pub snapshots: Vec<(usize, TrainedPipeline)>,
    pub log: TrainLog,
}

/// Train and capture snapshots after each epoch listed in `snapshot_epochs`
/// (0 = the untrained input). Snapshot epochs must be <= cfg.epochs.
pub fn train_with_snapshots(
    corpus_train: &Corpus,
    base: &TrainedPipeline,
    cfg: &TrainConfig,
    snapshot_epochs: &[usize],
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    if let Some(&bad) = snapshot_epochs.iter().find(|&&e| e > cfg.epochs) {
        return Err(Error::InvalidConfig(alloc::format!(
            "snapshot epoch {bad} exceeds configured epochs {}",
            cfg.epochs
        )));
    }

    let mut pipeline = base.clone();
    pipeline.train_config = cfg.clone();

    // Tokenize once.
    let mut examples: Vec<TrainingExample> = Vec::with_capacity(corpus_train.len());
    let mut example_user: Vec<String> = Vec::with_capacity(corpus_train.len());
    let mut skipped = 0usize;
    for record in corpus_train.records() {
        match make_training_example(record, &pipeline.lm.vocab, cfg.source_len, cfg.target_len) {
            Some(ex) => {
                examples.push(ex);
                example_user.push(record.user_id.clone());
            }
            None => skipped += 1,
        }
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    // Prompt mode needs a stored vector for every training user.
    if cfg.mode == TrainMode::PromptTune {
        for user in corpus_train.users() {
            let vector = pipeline
                .user_vectors
                .get(&user)
                .ok_or(Error::MissingUserVector(user.clone()))?;
            if vector.dim() != pipeline.prompt_model.input_dim() {
                return Err(Error::ShapeMismatch {
                    expected: pipeline.prompt_model.input_dim(),
                    got: vector.dim(),
                });
            }
        }
    }

    let mut snapshot_list = Vec::new();
    let record_snapshot = |epoch: usize, state: &TrainedPipeline, out: &mut Vec<(usize, TrainedPipeline)>| {
        if snapshot_epochs.contains(&epoch) {
            out.push((epoch, state.clone()));
        }
    };
    record_snapshot(0, &pipeline, &mut snapshot_list);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut optimizer = match cfg.mode {
        TrainMode::FineTune => AdamW::new(
            cfg.learning_rate,
            cfg.weight_decay,
            cfg.warmup_steps,
            &pipeline.lm.tensor_shapes(),
        ),
        TrainMode::PromptTune => AdamW::new(
            cfg.learning_rate,
            cfg.weight_decay,
            cfg.warmup_steps,
            &pipeline.prompt_model.tensor_shapes(),
        ),
    };
    // Untouched in prompt mode; reused in fine mode.
    let mut lm_grads = pipeline.lm.zero_grads();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        Rng::derive(cfg.seed, &[LBL_EPOCH, epoch as u64]).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            let mut batch_tokens = 0usize;
            match cfg.mode {
                TrainMode::FineTune => {
                    lm_grads.scale(0.0);
                    for &i in batch {
                        let mut d_logits = Vec::new();
                        let (pass, cache) =
                            example_pass(&pipeline.lm, None, &examples[i], Some(&mut d_logits))?;
                        pipeline.lm.backward(
                            cache.as_ref().expect("cache requested"),
                            &d_logits,
                            &mut lm_grads,
                            true,
                        );
                        epoch_loss += pass.loss_sum;
                        epoch_tokens += pass.count;
                        batch_tokens += pass.count;
                    }
                    if batch_tokens == 0 {
                        continue;
                    }
                    lm_grads.scale(1.0 / batch_tokens as f64);
                    let grad_tensors = lm_grads.tensors();
                    let mut params = pipeline.lm.tensors_mut();
                    optimizer.step(&mut params, &grad_tensors);
                }
                TrainMode::PromptTune => {
                    let mut mlp_grads = pipeline.prompt_model.zero_grads();
                    // One MLP pass per distinct user in the batch; prefix
                    // gradients accumulate per user.
                    let mut per_user: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                    let mut prefixes: BTreeMap<&str, (PrefixPrompt, crate::pipeline::prompt::MlpCache)> =
                        BTreeMap::new();
                    for &i in batch {
                        let user = example_user[i].as_str();
                        if !prefixes.contains_key(user) {
                            let vector = &pipeline.user_vectors[user];
                            let fwd = pipeline.prompt_model.forward(&vector.values)?;
                            prefixes.insert(user, fwd);
                        }
                        let (prefix, _) = &prefixes[user];
                        let mut d_logits = Vec::new();
                        let (pass, cache) = example_pass(
                            &pipeline.lm,
                            Some(prefix),
                            &examples[i],
                            Some(&mut d_logits),
                        )?;
                        let d_prefix = pipeline.lm.backward(
                            cache.as_ref().expect("cache requested"),
                            &d_logits,
                            &mut lm_grads,
                            false,
                        );
                        match per_user.get_mut(user) {
                            Some(acc) => {
                                for (a, g) in acc.iter_mut().zip(&d_prefix) {
                                    *a += g;
                                }
                            }
                            None => {
                                per_user.insert(user, d_prefix);
                            }
                        }
                        epoch_loss += pass.loss_sum;
                        epoch_tokens += pass.count;
                        batch_tokens += pass.count;
                    }
                    if batch_tokens == 0 {
                        continue;
                    }
                    for (user, d_prefix) in &per_user {
                        let (_, cache) = &prefixes[user];
                        pipeline.prompt_model.backward(cache, d_prefix, &mut mlp_grads);
                    }
                    mlp_grads.scale(1.0 / batch_tokens as f64);
                    let grad_tensors = mlp_grads.tensors();
                    let mut params = pipeline.prompt_model.tensors_mut();
                    optimizer.step(&mut params, &grad_tensors);
                }
            }
        }
        epoch_losses.push(if epoch_tokens == 0 { 0.0 } else { epoch_loss / epoch_tokens as f64 });
        record_snapshot(epoch, &pipeline, &mut snapshot_list);
    }

    Ok(TrainOutcome {
        pipeline,
        snapshots: snapshot_list,
        log: TrainLog { epoch_losses, skipped_records: skipped },
    })
}

/// Train to completion; see [`train_with_snapshots`].
pub fn train(
    corpus_train: &Corpus,
    base: &TrainedPipeline,
    cfg: &TrainConfig,
) -> Result<TrainedPipeline, Error> {
    Ok(train_with_snapshots(corpus_train, base, cfg, &[])?.pipeline)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// exp(mean masked cross-entropy) over all target tokens.
    pub perplexity: f64,
    /// Teacher-forced top-1 match rate over all target tokens.
    pub token_accuracy: f64,
}

/// Perplexity and accuracy in one pass. Conditioning follows the pipeline's
/// training mode: prompt-tuned pipelines evaluate with each user's prefix,
/// fine-tuned (and untrained base) pipelines evaluate bare.
pub fn evaluate(pipeline: &TrainedPipeline, corpus_eval: &Corpus) -> Result<EvalMetrics, Error> {
    let cfg = &pipeline.train_config;
    let mut prefix_cache: BTreeMap<&str, PrefixPrompt> = BTreeMap::new();
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    let mut correct = 0usize;
    for record in corpus_eval.records() {
        let Some(example) =
            make_training_example(record, &pipeline.lm.vocab, cfg.source_len, cfg.target_len)
        else {
            continue;
        };
        let prefix = match cfg.mode {
            TrainMode::FineTune => None,
            TrainMode::PromptTune => {
                let user = record.user_id.as_str();
                if !prefix_cache.contains_key(user) {
                    prefix_cache.insert(user, pipeline.prefix_for(user)?);
                }
                Some(&prefix_cache[user])
            }
        };
        let (pass, _) = example_pass(&pipeline.lm, prefix.map(|p| &*p), &example, None)?;
        loss_sum += pass.loss_sum;
        count += pass.count;
        correct += pass.correct;
    }
    if count == 0 {
        return Err(Error::EmptyEvalSet);
    }
    Ok(EvalMetrics {
        perplexity: math::exp(loss_sum / count as f64),
        token_accuracy: correct as f64 / count as f64,
    })
}

pub fn perplexity(pipeline: &TrainedPipeline, corpus_eval: &Corpus) -> Result<f64, Error> {
    Ok(evaluate(pipeline, corpus_eval)?.perplexity)
}

pub fn token_accuracy(pipeline: &TrainedPipeline, corpus_eval: &Corpus) -> Result<f64, Error> {
    Ok(evaluate(pipeline, corpus_eval)?.token_accuracy)
}
