//! Core algorithms for a prompt-tuned email-reply pipeline and the canary
//! attacks that audit its leakage.
//!
//! The pipeline maps a per-user n-gram frequency vector through a shared MLP
//! to a continuous prefix prompt, which steers a small causal language model
//! to produce user-customized replies. The attack side injects canary tokens
//! into one user's training replies and measures how often queries against
//! the trained pipeline reproduce them.
//!
//! Everything in this crate is pure computation over owned data: seeded,
//! deterministic, and `no_std` (with `alloc`). File formats, the CLI, and the
//! experiment harness live in the companion `promptleak-lab` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attack;
pub mod canary;
pub mod corpus;
pub mod error;
pub mod featurizer;
pub mod hash;
mod math;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod text;
pub mod trainer;

pub use error::Error;
pub use rng::Rng;
