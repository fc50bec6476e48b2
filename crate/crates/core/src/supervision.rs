//! Section-wise loss masks and lead-span truncation.
//!
//! Label position `t` supervises the prediction of token `t + 1` from tokens
//! `0..=t`, so a length-`T` sequence has `T - 1` label positions and a mask
//! bit refers to the span membership of the predicted token.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{SegmentedExample, Span, Spans};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SupervisionRegime {
    A,
    PA,
    Cot,
    CotA,
    PCot,
    PCotA,
}

impl SupervisionRegime {
    pub const ALL: [SupervisionRegime; 6] = [
        SupervisionRegime::A,
        SupervisionRegime::PA,
        SupervisionRegime::Cot,
        SupervisionRegime::CotA,
        SupervisionRegime::PCot,
        SupervisionRegime::PCotA,
    ];

    /// (prompt, cot, answer) inclusion flags.
    pub fn sections(self) -> (bool, bool, bool) {
        match self {
            SupervisionRegime::A => (false, false, true),
            SupervisionRegime::PA => (true, false, true),
            SupervisionRegime::Cot => (false, true, false),
            SupervisionRegime::CotA => (false, true, true),
            SupervisionRegime::PCot => (true, true, false),
            SupervisionRegime::PCotA => (true, true, true),
        }
    }

    pub fn includes_cot(self) -> bool {
        self.sections().1
    }

    pub fn label(self) -> &'static str {
        match self {
            SupervisionRegime::A => "A",
            SupervisionRegime::PA => "P+A",
            SupervisionRegime::Cot => "CoT",
            SupervisionRegime::CotA => "CoT+A",
            SupervisionRegime::PCot => "P+CoT",
            SupervisionRegime::PCotA => "P+CoT+A",
        }
    }
}

impl fmt::Display for SupervisionRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SupervisionRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '_' { '+' } else { c })
            .collect();
        Ok(match norm.as_str() {
            "a" => SupervisionRegime::A,
            "p+a" => SupervisionRegime::PA,
            "cot" => SupervisionRegime::Cot,
            "cot+a" => SupervisionRegime::CotA,
            "p+cot" => SupervisionRegime::PCot,
            "p+cot+a" => SupervisionRegime::PCotA,
            _ => return Err(Error::InvalidRegime(s.to_string())),
        })
    }
}

impl Serialize for SupervisionRegime {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for SupervisionRegime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which contiguous part of each sequence enters training at all.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TruncationPolicy {
    #[default]
    None,
    /// Keep the first `ceil(p * T)` tokens.
    Lsp(f64),
    /// Keep `[0, ceil(T/2))`; identical to `Lsp(0.5)`.
    LeftHalf,
    /// Keep `[ceil(T/2), T)`.
    RightHalf,
}

impl TruncationPolicy {
    pub fn lsp(p: f64) -> Result<Self> {
        if p > 0.0 && p <= 1.0 {
            Ok(TruncationPolicy::Lsp(p))
        } else {
            Err(Error::InvalidTruncation(format!("lsp:{p}")))
        }
    }

    /// Kept range for a sequence of `len` tokens (possibly empty).
    pub fn kept_range(&self, len: usize) -> Span {
        let half = len.div_ceil(2);
        match *self {
            TruncationPolicy::None => Span::new(0, len),
            TruncationPolicy::Lsp(p) => Span::new(0, lead_span_len(p, len)),
            TruncationPolicy::LeftHalf => Span::new(0, half),
            TruncationPolicy::RightHalf => Span::new(half, len),
        }
    }

    /// True when the kept tokens always form a prefix of the sequence.
    pub fn is_prefix(&self) -> bool {
        !matches!(self, TruncationPolicy::RightHalf)
    }
}

/// `ceil(p * len)`, treating products within float noise of an integer as
/// that integer (so `0.3 * 10` keeps 3 tokens, not 4).
pub fn lead_span_len(p: f64, len: usize) -> usize {
    let x = p * len as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k.max(0.0) as usize).min(len)
}

impl fmt::Display for TruncationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruncationPolicy::None => f.write_str("none"),
            TruncationPolicy::Lsp(p) => write!(f, "lsp:{p}"),
            TruncationPolicy::LeftHalf => f.write_str("left"),
            TruncationPolicy::RightHalf => f.write_str("right"),
        }
    }
}

impl FromStr for TruncationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        match norm.as_str() {
            "none" => Ok(TruncationPolicy::None),
            "left" => Ok(TruncationPolicy::LeftHalf),
            "right" => Ok(TruncationPolicy::RightHalf),
            _ => {
                let p = norm
                    .strip_prefix("lsp:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidTruncation(s.to_string()))?;
                TruncationPolicy::lsp(p).map_err(|_| Error::InvalidTruncation(s.to_string()))
            }
        }
    }
}

impl Serialize for TruncationPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TruncationPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-label-position loss selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionMask {
    pub bits: Vec<bool>,
}

impl SupervisionMask {
    pub fn all(len: usize) -> Self {
        Self {
            bits: vec![true; len],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn or(&self, other: &Self) -> Self {
        Self {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    /// One JSON line for mask audits: `{"id":…,"bits":[0,1,…]}`.
    pub fn to_json_line(&self, id: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            id: &'a str,
            bits: Vec<u8>,
        }
        Ok(serde_json::to_string(&Dump {
            id,
            bits: self.bits.iter().map(|&b| b as u8).collect(),
        })?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncatedExample {
    pub token_ids: Vec<u32>,
    /// Kept range in original token coordinates.
    pub kept_range: Span,
    pub origin_length: usize,
}

fn mask_from_spans(spans: &Spans, len: usize, regime: SupervisionRegime) -> Result<SupervisionMask> {
    let (p, c, a) = regime.sections();
    let labels = len.saturating_sub(1);
    let bits: Vec<bool> = (0..labels)
        .map(|t| {
            let target = t + 1;
            (p && spans.prompt.contains(target))
                || (c && spans.cot.contains(target))
                || (a && spans.answer.contains(target))
        })
        .collect();
    if !bits.iter().any(|&b| b) {
        return Err(Error::DegenerateRegime {
            regime: regime.to_string(),
        });
    }
    Ok(SupervisionMask { bits })
}

/// Loss mask over the `T - 1` label positions of an untruncated example.
pub fn build_mask(example: &SegmentedExample, regime: SupervisionRegime) -> Result<SupervisionMask> {
    mask_from_spans(&example.spans, example.len(), regime)
}

pub fn truncate(token_ids: &[u32], policy: TruncationPolicy) -> Result<TruncatedExample> {
    let len = token_ids.len();
    let kept = policy.kept_range(len);
    if kept.is_empty() {
        return Err(Error::EmptyResult {
            policy: policy.to_string(),
            len,
        });
    }
    Ok(TruncatedExample {
        token_ids: token_ids[kept.start..kept.end].to_vec(),
        kept_range: kept,
        origin_length: len,
    })
}

/// Truncates first, then masks the surviving label positions with spans
/// clipped to the kept range.
pub fn compose(
    example: &SegmentedExample,
    policy: TruncationPolicy,
    regime: SupervisionRegime,
) -> Result<(TruncatedExample, SupervisionMask)> {
    let truncated = truncate(&example.token_ids, policy)?;
    let kept = truncated.kept_range;
    let clipped = Spans {
        prompt: example.spans.prompt.clip_to(kept),
        cot: example.spans.cot.clip_to(kept),
        answer: example.spans.answer.clip_to(kept),
    };
    let mask = mask_from_spans(&clipped, truncated.token_ids.len(), regime)?;
    Ok((truncated, mask))
}
