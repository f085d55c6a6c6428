//! JSONL corpus ingestion and emission.
//!
//! One object per line with required keys `user_id`, `message`, `reply`.
//! Ingestion applies the signature-stripping rule and skips (but counts)
//! records left empty by it; malformed lines fail with their line number.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use promptleak_core::corpus::{Corpus, EmailRecord, PreprocessRules};
use promptleak_core::text;

use crate::error::{LabError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    user_id: String,
    message: String,
    reply: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    /// Records dropped because message or reply was empty after stripping.
    pub skipped_empty: usize,
}

pub fn ingest_jsonl(path: &Path, rules: &PreprocessRules) -> Result<(Corpus, IngestReport)> {
    let content = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| LabError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.user_id.is_empty() {
            return Err(LabError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "user_id is empty".into(),
            });
        }
        let message = rules.apply(&raw.message);
        let reply = rules.apply(&raw.reply);
        if text::token_count(&message) == 0 || text::token_count(&reply) == 0 {
            report.skipped_empty += 1;
            continue;
        }
        records.push(EmailRecord { user_id: raw.user_id, message, reply });
    }
    let corpus = Corpus::from_records(records).map_err(LabError::Core)?;
    Ok((corpus, report))
}

pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for record in corpus.records() {
        let raw = RawRecord {
            user_id: record.user_id.clone(),
            message: record.message.clone(),
            reply: record.reply.clone(),
        };
        serde_json::to_writer(&mut out, &raw)
            .map_err(|e| LabError::Json { path: path.to_path_buf(), source: e })?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    file.write_all(&out).map_err(|e| LabError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("promptleak-jsonl-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn three_valid_lines_ingest() {
        let path = write_temp(
            "ok.jsonl",
            concat!(
                r#"{"user_id":"u1","message":"hi there","reply":"ok then"}"#,
                "\n",
                r#"{"user_id":"u1","message":"more text","reply":"sure thing"}"#,
                "\n",
                r#"{"user_id":"u2","message":"question here","reply":"answer there"}"#,
                "\n"
            ),
        );
        let (corpus, report) = ingest_jsonl(&path, &PreprocessRules::default()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.users(), vec!["u1".to_string(), "u2".to_string()]);
        assert_eq!(report.skipped_empty, 0);
    }

    #[test]
    fn missing_field_names_the_line() {
        let path = write_temp(
            "missing.jsonl",
            concat!(
                r#"{"user_id":"u1","message":"hi there","reply":"ok then"}"#,
                "\n",
                r#"{"user_id":"u1","message":"no reply field"}"#,
                "\n"
            ),
        );
        let err = ingest_jsonl(&path, &PreprocessRules::default()).unwrap_err();
        match err {
            LabError::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("reply"), "message: {message}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn signature_rule_applies_to_replies() {
        let path = write_temp(
            "sig.jsonl",
            concat!(r#"{"user_id":"u1","message":"hi there","reply":"ok\n--\nJane Doe, CEO"}"#, "\n"),
        );
        let (corpus, _) = ingest_jsonl(&path, &PreprocessRules::default()).unwrap();
        assert_eq!(corpus.records()[0].reply, "ok");
    }

    #[test]
    fn records_left_empty_are_skipped_and_counted() {
        let path = write_temp(
            "empty.jsonl",
            concat!(
                r#"{"user_id":"u1","message":"hi there","reply":"--\nJust A Signature"}"#,
                "\n",
                r#"{"user_id":"u1","message":"hi again","reply":"real reply"}"#,
                "\n"
            ),
        );
        let (corpus, report) = ingest_jsonl(&path, &PreprocessRules::default()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(report.skipped_empty, 1);
    }

    #[test]
    fn zero_valid_records_is_an_error() {
        let path = write_temp(
            "none.jsonl",
            concat!(r#"{"user_id":"u1","message":"hi","reply":"--\nsig only"}"#, "\n"),
        );
        let err = ingest_jsonl(&path, &PreprocessRules::default()).unwrap_err();
        assert!(matches!(err, LabError::Core(promptleak_core::Error::EmptyCorpus)));
    }

    #[test]
    fn jsonl_round_trips() {
        let records = vec![
            EmailRecord { user_id: "u1".into(), message: "hi a".into(), reply: "ok b".into() },
            EmailRecord { user_id: "u2".into(), message: "hi c".into(), reply: "ok d".into() },
        ];
        let corpus = Corpus::from_records(records).unwrap();
        let path = std::env::temp_dir().join("promptleak-jsonl-tests").join("round.jsonl");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_jsonl(&corpus, &path).unwrap();
        let (back, _) = ingest_jsonl(&path, &PreprocessRules { signature_delimiter: None }).unwrap();
        assert_eq!(corpus, back);
    }
}
