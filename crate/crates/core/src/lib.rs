//! Segment-aware knowledge distillation for chain-of-thought corpora.
//!
//! The crate splits reasoning transcripts into prompt, chain-of-thought and
//! answer spans, builds section-wise loss masks and lead-span truncations,
//! trains micro causal transformers with a blended forward-KL / NLL objective,
//! and ships the analytics used to read the results (knee detection,
//! retention ratios, derivation-position audits and compute-cost models).

pub mod analysis;
pub mod corpus;
pub mod cost;
mod error;
pub mod io;
pub mod kdloss;
pub mod microlm;
pub mod supervision;
pub mod trainer;

pub use error::{Error, Result};
