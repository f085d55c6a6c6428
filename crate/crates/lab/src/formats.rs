//! On-disk formats: dictionary text files, feature-vector JSON, versioned
//! pipeline checkpoints, and run manifests.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use promptleak_core::featurizer::{NGramDictionary, UserFeatureVector};
use promptleak_core::trainer::{TrainConfig, TrainedPipeline};

use crate::error::{LabError, Result};

/// Dictionary text format: one n-gram per line, tokens space-joined, line
/// order equal to entry order.
pub fn write_dictionary(dict: &NGramDictionary, path: &Path) -> Result<()> {
    let mut out = String::new();
    for entry in dict.entries() {
        out.push_str(&entry.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| LabError::io(path, e))
}

pub fn read_dictionary(path: &Path, max_n: usize) -> Result<NGramDictionary> {
    let content = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let entries: Vec<Vec<String>> = content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|w| w.to_string()).collect())
        .collect();
    NGramDictionary::from_entries(entries, max_n).map_err(LabError::Core)
}

pub fn write_vector(vector: &UserFeatureVector, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(vector)
        .map_err(|e| LabError::Json { path: path.to_path_buf(), source: e })?;
    fs::write(path, json).map_err(|e| LabError::io(path, e))
}

pub fn read_vector(path: &Path) -> Result<UserFeatureVector> {
    let content = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&content).map_err(|e| LabError::Json { path: path.to_path_buf(), source: e })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing checkpoint: format version plus the full pipeline
/// (architecture descriptors, weights, vocabulary, dictionary, user
/// vectors, train config snapshot).
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    pipeline: TrainedPipeline,
}

pub fn save_checkpoint(pipeline: &TrainedPipeline, path: &Path) -> Result<()> {
    let file = CheckpointFile { format_version: CHECKPOINT_VERSION, pipeline: pipeline.clone() };
    let json = serde_json::to_string(&file)
        .map_err(|e| LabError::Json { path: path.to_path_buf(), source: e })?;
    fs::write(path, json).map_err(|e| LabError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedPipeline> {
    let content = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut file: CheckpointFile = serde_json::from_str(&content)
        .map_err(|e| LabError::Json { path: path.to_path_buf(), source: e })?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(LabError::CheckpointVersion {
            found: file.format_version,
            supported: CHECKPOINT_VERSION,
        });
    }
    // The vocabulary's lookup index is not serialized.
    file.pipeline.lm.vocab.rebuild_index();
    file.pipeline.validate().map_err(LabError::Core)?;
    Ok(file.pipeline)
}

/// Everything needed to reconstruct one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Hash of the reproducible inputs (config + corpus + seeds), hex.
    pub manifest_id: String,
    pub train_config: TrainConfig,
    pub corpus_fingerprint: String,
    pub pretrain_fingerprint: Option<String>,
    pub checkpoint_id: String,
    pub frozen_lm_checksum: String,
    pub prompt_model_checksum: String,
    pub per_epoch_loss: Vec<f64>,
    pub skipped_records: usize,
    pub injection_density: Option<f64>,
    /// Wall-clock seconds; informational, never part of determinism checks.
    pub wall_clock_secs: f64,
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| LabError::Json { path: path.to_path_buf(), source: e })?;
    fs::write(path, json).map_err(|e| LabError::io(path, e))
}
