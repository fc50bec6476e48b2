//! Dialogue ingestion, tag normalization, tokenization, (P, CoT, A)
//! segmentation, filtering, splitting, section statistics and synthetic
//! corpus generation.

mod record;
mod segment;
pub mod synthetic;
mod tokenizer;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use record::{
    linearize, normalize_tags, ChatTemplate, Message, RawRecord, Role, BEGIN_OF_THOUGHT,
    END_OF_THOUGHT, THINK_CLOSE, THINK_OPEN,
};
pub use segment::{char_to_token, segment, SegmentedExample, Span, Spans};
pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticCorpusConfig};
pub use tokenizer::{SpecialToken, Tokenizer, TokenizerKind, TokenizerSpec, BYTE_VOCAB};

use crate::{Error, Result};

/// Full ingestion path for one record: linearize, normalize, segment.
pub fn prepare_record(
    id: impl Into<String>,
    record: &RawRecord,
    template: &ChatTemplate,
    tokenizer: &Tokenizer,
) -> Result<SegmentedExample> {
    let text = normalize_tags(&linearize(record, template)?);
    segment(id, &text, tokenizer)
}

/// Keeps examples strictly shorter than `max_tokens`, preserving order.
pub fn filter_by_length(corpus: Vec<SegmentedExample>, max_tokens: usize) -> Vec<SegmentedExample> {
    corpus.into_iter().filter(|ex| ex.len() < max_tokens).collect()
}

/// Seeded shuffle, then the first `n_valid` examples become validation.
pub fn split_train_valid<T>(corpus: Vec<T>, n_valid: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if n_valid >= corpus.len() {
        return Err(Error::InsufficientExamples {
            requested: n_valid,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<Option<T>> = corpus.into_iter().map(Some).collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let mut take = |i: usize| items[i].take().expect("index visited once");
    let valid: Vec<T> = order[..n_valid].iter().map(|&i| take(i)).collect();
    let train: Vec<T> = order[n_valid..].iter().map(|&i| take(i)).collect();
    Ok((train, valid))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionSummary {
    /// Mean token count over examples.
    pub mean_tokens: f64,
    /// Mean section length divided by mean full length (1.0 for `full`).
    pub share: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionStats {
    pub full: SectionSummary,
    pub prompt: SectionSummary,
    pub cot: SectionSummary,
    pub answer: SectionSummary,
}

pub fn section_stats(corpus: &[SegmentedExample]) -> Result<SectionStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len();
    let mean = |f: &dyn Fn(&SegmentedExample) -> usize| {
        corpus.iter().map(|ex| f(ex) as f64).sum::<f64>() / n as f64
    };
    let full = mean(&|ex| ex.len());
    let prompt = mean(&|ex| ex.spans.prompt.len());
    let cot = mean(&|ex| ex.spans.cot.len());
    let answer = mean(&|ex| ex.spans.answer.len());
    let summary = |m: f64| SectionSummary {
        mean_tokens: m,
        share: if full > 0.0 { m / full } else { 0.0 },
        count: n,
    };
    Ok(SectionStats {
        full: SectionSummary {
            mean_tokens: full,
            share: 1.0,
            count: n,
        },
        prompt: summary(prompt),
        cot: summary(cot),
        answer: summary(answer),
    })
}
