//! The generation pipeline: a user's feature vector becomes a continuous
//! prefix through the prompt MLP, and the prefix steers the causal LM that
//! decodes replies.

pub mod decode;
pub mod lm;
pub mod prompt;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use decode::{beam_decode, greedy_decode, DecodingConfig, DecodingStrategy, SequenceModel};
pub use lm::{LmConfig, LmGrads, LmParams};
pub use prompt::{prompt_from_vector, Activation, MlpConfig, MlpGrads, PromptModelParams};

/// K virtual-token embeddings prepended before the message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixPrompt {
    prompt_len: usize,
    model_dim: usize,
    data: Vec<f64>,
}

impl PrefixPrompt {
    pub fn new(prompt_len: usize, model_dim: usize, data: Vec<f64>) -> Result<Self, Error> {
        if prompt_len == 0 {
            return Err(Error::InvalidConfig("prefix length must be >= 1".into()));
        }
        if data.len() != prompt_len * model_dim {
            return Err(Error::ShapeMismatch { expected: prompt_len * model_dim, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("prefix contains non-finite entries".into()));
        }
        Ok(Self { prompt_len, model_dim, data })
    }

    pub fn zeros(prompt_len: usize, model_dim: usize) -> Self {
        Self { prompt_len, model_dim, data: alloc::vec![0.0; prompt_len * model_dim] }
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.model_dim..(i + 1) * self.model_dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}
