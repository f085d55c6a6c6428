use alloc::string::String;
use core::fmt;

/// Errors surfaced by the pipeline, trainer, and attack operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A configuration value violates its documented invariant.
    InvalidConfig(String),
    /// A corpus (or the relevant slice of it) contains no usable records.
    EmptyCorpus,
    /// A vector or matrix dimension does not match what the consumer expects.
    ShapeMismatch { expected: usize, got: usize },
    /// Prefix plus token positions exceed the model's context window.
    ContextOverflow { needed: usize, window: usize },
    /// The pipeline has no stored feature vector for this user.
    MissingUserVector(String),
    /// Evaluation was requested over an empty example set.
    EmptyEvalSet,
    /// Leakage rate requested over an empty output set.
    EmptyOutputs,
    /// A required token (e.g. a canary) is not in the model vocabulary.
    TokenNotInVocab(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EmptyCorpus => write!(f, "corpus contains no usable records"),
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            Error::ContextOverflow { needed, window } => {
                write!(f, "sequence needs {needed} positions, context window is {window}")
            }
            Error::MissingUserVector(user) => {
                write!(f, "no feature vector stored for user {user:?}")
            }
            Error::EmptyEvalSet => write!(f, "evaluation set is empty"),
            Error::EmptyOutputs => write!(f, "no decoded outputs to score"),
            Error::TokenNotInVocab(tok) => {
                write!(f, "token {tok:?} is not in the vocabulary")
            }
        }
    }
}

impl core::error::Error for Error {}
