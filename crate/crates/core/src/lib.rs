//! Conceptual role model toolkit.
//!
//! Trains a small masked-language-model encoder on word-definition instances,
//! integrates its weights with a base encoder through uniform averaging plus
//! low-rank adapters on the self-attention projections, and measures
//! semantic, negational, symmetric and transitive consistency of the
//! resulting classifiers.
//!
//! Layering, bottom-up:
//!
//! - [`numerics`]: dense matrices, losses, divergences, AdamW and the
//!   warmup/decay schedule.
//! - [`model`]: the encoder, its hand-derived backward pass, vocabulary and
//!   the `CRMW` checkpoint container.
//! - [`lexicon`]: dictionary ingestion and masked instance construction.
//! - [`merge`]: weight averaging, adapters and fold-in.
//! - [`training`]: MLM, skip-gram, and the fine-tuning family.
//! - [`consistency`]: metrics, significance testing and the synthetic suite.

pub mod consistency;
pub mod error;
pub mod lexicon;
pub mod merge;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
