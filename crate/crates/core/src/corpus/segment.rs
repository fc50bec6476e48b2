use serde::{Deserialize, Serialize};

use super::Tokenizer;
use crate::{Error, Result};

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.start <= idx && idx < self.end
    }

    /// Intersection with `range`, re-expressed relative to `range.start`.
    pub fn clip_to(&self, range: Span) -> Span {
        let start = self.start.clamp(range.start, range.end);
        let end = self.end.clamp(range.start, range.end);
        Span::new(start - range.start, end.max(start) - range.start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spans {
    pub prompt: Span,
    pub cot: Span,
    pub answer: Span,
}

/// A tokenized record split into prompt, chain-of-thought and answer spans.
///
/// The spans partition `[0, T)`; the CoT span starts at the `<think>` token
/// and ends just after `</think>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentedExample {
    pub id: String,
    pub text: String,
    pub token_ids: Vec<u32>,
    pub spans: Spans,
}

impl SegmentedExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn prompt_span(&self) -> Span {
        self.spans.prompt
    }

    pub fn cot_span(&self) -> Span {
        self.spans.cot
    }

    pub fn answer_span(&self) -> Span {
        self.spans.answer
    }

    /// Token ids strictly between `<think>` and `</think>`.
    pub fn cot_inner_ids(&self) -> &[u32] {
        let cot = self.spans.cot;
        &self.token_ids[cot.start + 1..cot.end - 1]
    }

    /// Checks the partition invariant and, when a tokenizer is given, the
    /// delimiter placement and that the text re-encodes to `token_ids`.
    pub fn validate(&self, tokenizer: Option<&Tokenizer>) -> Result<()> {
        let Spans {
            prompt,
            cot,
            answer,
        } = self.spans;
        let t = self.token_ids.len();
        let ok = prompt.start == 0
            && prompt.start <= prompt.end
            && prompt.end == cot.start
            && cot.start <= cot.end
            && cot.end == answer.start
            && answer.start <= answer.end
            && answer.end == t;
        if !ok {
            return Err(Error::InvalidExample(format!(
                "spans {:?} do not partition [0,{t})",
                self.spans
            )));
        }
        if cot.len() < 2 {
            return Err(Error::InvalidExample("CoT span shorter than its delimiters".into()));
        }
        if let Some(tok) = tokenizer {
            if self.token_ids[cot.start] != tok.think_open_id()
                || self.token_ids[cot.end - 1] != tok.think_close_id()
            {
                return Err(Error::InvalidExample("CoT span is not framed by think tags".into()));
            }
            if tok.encode(&self.text) != self.token_ids {
                return Err(Error::InvalidExample("text does not encode to token_ids".into()));
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and validates one JSONL line.
    pub fn from_json_line(line: &str, tokenizer: Option<&Tokenizer>) -> Result<Self> {
        let ex: SegmentedExample = serde_json::from_str(line.trim_end_matches(['\r', '\n']))?;
        ex.validate(tokenizer)?;
        Ok(ex)
    }
}

/// Tokenizes normalized text and splits it at the single `<think>`/`</think>`
/// pair. Tokens before `<think>` form the prompt, the tags and everything
/// between them the CoT, and the rest the answer.
pub fn segment(id: impl Into<String>, text: &str, tokenizer: &Tokenizer) -> Result<SegmentedExample> {
    let token_ids = tokenizer.encode(text);
    let open = tokenizer.think_open_id();
    let close = tokenizer.think_close_id();
    let opens: Vec<usize> = positions(&token_ids, open);
    let closes: Vec<usize> = positions(&token_ids, close);
    let (o, c) = match (opens.as_slice(), closes.as_slice()) {
        ([o], [c]) if o < c => (*o, *c),
        _ => {
            return Err(Error::MalformedThinkTags {
                opens: opens.len(),
                closes: closes.len(),
            })
        }
    };
    let t = token_ids.len();
    Ok(SegmentedExample {
        id: id.into(),
        text: text.to_string(),
        token_ids,
        spans: Spans {
            prompt: Span::new(0, o),
            cot: Span::new(o, c + 1),
            answer: Span::new(c + 1, t),
        },
    })
}

fn positions(ids: &[u32], target: u32) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &id)| id == target)
        .map(|(i, _)| i)
        .collect()
}

/// Index of the token whose decoded byte range contains byte offset
/// `char_offset` of `text`.
pub fn char_to_token(text: &str, tokenizer: &Tokenizer, char_offset: usize) -> Result<usize> {
    if char_offset >= text.len() {
        return Err(Error::OffsetOutOfRange {
            offset: char_offset,
            len: text.len(),
        });
    }
    let ids = tokenizer.encode(text);
    let ends = tokenizer.byte_ends(&ids)?;
    // first token whose end lies beyond the offset
    Ok(ends.partition_point(|&end| end <= char_offset))
}
