//! Decode-path diagnostics: where does the canary rank during generation?

use std::collections::BTreeMap;

use promptleak_core::canary::{inject_canaries, PrivacyConfig};
use promptleak_core::corpus::{split, synthesize_corpus, Corpus, CorpusSpec, EmailRecord};
use promptleak_core::featurizer::{build_dictionary, user_vector, VectorScope};
use promptleak_core::pipeline::lm::{DecodeState, LmConfig, LmParams};
use promptleak_core::pipeline::prompt::{MlpConfig, PromptModelParams};
use promptleak_core::text::Vocab;
use promptleak_core::trainer::{train, TrainConfig, TrainMode, TrainedPipeline};

#[test]
#[ignore]
fn decode_path_diagnostics() {
    let spec = CorpusSpec {
        pairs_per_user: 32,
        reply_len: (10, 14),
        message_len: (4, 7),
        vocab_size: 48,
        phrase_bank_size: 32,
        phrases_per_user: 4,
        user_style_strength: 0.45,
        rare_word_rate: 0.18,
        rare_pool_size: 300,
        ..CorpusSpec::toy_default()
    };
    let target = synthesize_corpus(&spec, 42).unwrap();
    let outcome = split(&target, 0.8, 42).unwrap();
    let public = synthesize_corpus(&spec, 1042).unwrap();
    let privacy = PrivacyConfig::new("user-000", 0.2, 0.3, 7);
    let target_records: Vec<EmailRecord> =
        outcome.train.records_for("user-000").cloned().collect();
    let (injected, ledger) = inject_canaries(&target_records, &privacy).unwrap();
    println!(
        "injected replies: {} with {} tokens total",
        ledger.len(),
        ledger.iter().map(|e| e.positions.len()).sum::<usize>()
    );
    let mut train_records: Vec<EmailRecord> = Vec::new();
    let mut it = injected.into_iter();
    for record in outcome.train.records() {
        if record.user_id == "user-000" {
            train_records.push(it.next().unwrap());
        } else {
            train_records.push(record.clone());
        }
    }
    let train_corpus = Corpus::from_records(train_records).unwrap();

    // exposure so the canary embedding is warm
    let mut pre_records: Vec<EmailRecord> = public.records().to_vec();
    let donor: Vec<EmailRecord> = public.records().iter().take(15).cloned().collect();
    let expose_cfg = PrivacyConfig {
        canary_tokens: privacy.canary_tokens.clone(),
        ..PrivacyConfig::new(donor[0].user_id.clone(), 0.0, 0.999, 555)
    };
    let (exposed, _) = inject_canaries(&donor, &expose_cfg).unwrap();
    pre_records.extend(exposed);
    let pretrain_corpus = Corpus::from_records(pre_records).unwrap();

    let mut counts: BTreeMap<String, u64> = pretrain_corpus.word_counts();
    for (w, c) in train_corpus.word_counts() {
        *counts.entry(w).or_insert(0) += c;
    }
    for (w, c) in outcome.test.word_counts() {
        *counts.entry(w).or_insert(0) += c;
    }
    let vocab =
        Vocab::build(counts.iter().map(|(w, &c)| (w.as_str(), c)), 2048, &privacy.canary_tokens)
            .unwrap();
    println!("vocab {}", vocab.len());
    let lm = LmParams::init(LmConfig::toy_default(), vocab, 7).unwrap();
    let dict = build_dictionary(&train_corpus, 256, 3).unwrap();
    let user_vectors: BTreeMap<String, _> = train_corpus
        .users()
        .into_iter()
        .map(|u| {
            let records: Vec<EmailRecord> = train_corpus.records_for(&u).cloned().collect();
            (u.clone(), user_vector(&records, &dict, VectorScope::RepliesOnly))
        })
        .collect();
    let mlp = PromptModelParams::init(
        MlpConfig { hidden_dims: vec![192], ..MlpConfig::new(dict.len(), 48, 64) },
        7,
    )
    .unwrap();
    let fresh = TrainedPipeline {
        lm,
        prompt_model: mlp,
        dict,
        user_vectors,
        train_config: TrainConfig { epochs: 0, ..TrainConfig::toy_default(TrainMode::PromptTune) },
    };
    let pre_cfg = TrainConfig {
        epochs: 8,
        learning_rate: 3e-3,
        seed: 7,
        ..TrainConfig::toy_default(TrainMode::FineTune)
    };
    let mut base = train(&pretrain_corpus, &fresh, &pre_cfg).unwrap();
    base.train_config = TrainConfig { epochs: 0, ..TrainConfig::toy_default(TrainMode::PromptTune) };
    let mut results = Vec::new();
    for tune_epochs in [60usize, 150] {
    let tune = TrainConfig {
        epochs: tune_epochs,
        learning_rate: 1e-2,
        seed: 7,
        ..TrainConfig::toy_default(TrainMode::PromptTune)
    };
    let tuned = train(&train_corpus, &base, &tune).unwrap();

    let canary_id = tuned.lm.vocab.id("appendage").unwrap() as usize;
    let prefix = tuned.prefix_for("user-000").unwrap();

    for (label, messages) in [
        (
            "train-msgs",
            train_corpus
                .records_for("user-000")
                .map(|r| r.message.clone())
                .take(40)
                .collect::<Vec<_>>(),
        ),
        (
            "test-msgs",
            outcome.test.records().iter().map(|r| r.message.clone()).take(40).collect::<Vec<_>>(),
        ),
    ] {
        let mut best_rank = usize::MAX;
        let mut rank_hist: BTreeMap<usize, usize> = BTreeMap::new();
        let mut leaks = 0;
        for msg in &messages {
            let mut tokens = tuned.lm.vocab.encode(msg);
            tokens.push(tuned.lm.vocab.sep());
            let mut state = DecodeState::new(&tuned.lm);
            let mut logits = state.prefill(Some(&prefix), &tokens).unwrap();
            let mut leaked = false;
            for _ in 0..16 {
                let mut idx: Vec<usize> = (0..logits.len()).collect();
                idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
                let rank = idx.iter().position(|&i| i == canary_id).unwrap();
                *rank_hist.entry(rank.min(10)).or_insert(0) += 1;
                best_rank = best_rank.min(rank);
                let top = idx[0] as u32;
                if top == canary_id as u32 {
                    leaked = true;
                }
                if top == tuned.lm.vocab.eos() {
                    break;
                }
                logits = state.step(top).unwrap();
            }
            if leaked {
                leaks += 1;
            }
        }
        println!("ep {tune_epochs} {label}: greedy-leaks {leaks}/{} best rank {best_rank} hist {rank_hist:?}", messages.len());
        results.push((tune_epochs, label, leaks));
    }
    // beam-4 leakage on test messages
    {
        use promptleak_core::attack::{run_attack, AttackConfig};
        use promptleak_core::pipeline::decode::DecodingConfig;
        let msgs: Vec<String> = outcome.test.records().iter().map(|r| r.message.clone()).collect();
        let tt: Vec<EmailRecord> = train_corpus.records_for("user-000").cloned().collect();
        let beam = AttackConfig::first_person(100, 2, DecodingConfig::beam(4, 16), 7);
        let rb = run_attack(&tuned, &beam, &privacy, &tt, &msgs).unwrap();
        let greedy = AttackConfig::first_person(100, 2, DecodingConfig::greedy(16), 7);
        let rg = run_attack(&tuned, &greedy, &privacy, &tt, &msgs).unwrap();
        println!("ep {tune_epochs}: attack greedy {:.3} beam4 {:.3}", rg.mean_rate, rb.mean_rate);
    }
    }
    let _ = results;
}
