//! Post-hoc analytics: knee detection on accuracy-vs-LSP curves, retention
//! and improvement ratios, derivation positions, self-reflection cue counts
//! and the judge-driven entailment audit.

mod audit;

pub use audit::{
    parse_verdict, render_instruction, run_audit, AuditConfig, AuditRecord, AuditReport, AuditSample,
    AuditVerdict, Judge, JudgeRequest, StubJudge, JUDGE_INSTRUCTION,
};
#[cfg(feature = "http-judge")]
pub use audit::HttpJudge;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_to_token, SegmentedExample, Tokenizer};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeResult {
    pub found: bool,
    pub knee_x: Option<f64>,
    pub knee_index: Option<usize>,
    /// Normalized difference curve `y_n - x_n`.
    pub difference: Vec<f64>,
}

// Differences this small are rounding noise from the normalization.
const FLAT_EPS: f64 = 1e-12;

fn normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / range).collect()
}

/// Unsmoothed Kneedle for concave increasing curves: min-max normalize both
/// axes and take the argmax of `y_n - x_n`. Reports not-found when the
/// maximum does not exceed `threshold`.
pub fn find_knee(xs: &[f64], ys: &[f64], threshold: f64) -> Result<KneeResult> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!("{} xs vs {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::TooFewPoints(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange("curve values must be finite".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NotIncreasing);
    }
    let xn = normalize(xs);
    let yn = normalize(ys);
    let difference: Vec<f64> = yn.iter().zip(&xn).map(|(y, x)| y - x).collect();
    let (idx, best) = difference
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
    let found = best > threshold + FLAT_EPS;
    Ok(KneeResult {
        found,
        knee_x: found.then(|| xs[idx]),
        knee_index: found.then_some(idx),
        difference,
    })
}

/// `metric_half / metric_full`.
pub fn retention_ratio(metric_half: f64, metric_full: f64) -> Result<f64> {
    if metric_full.is_nan() || metric_full <= 0.0 {
        return Err(Error::NonpositiveDenominator(metric_full));
    }
    Ok(metric_half / metric_full)
}

/// `(candidate - baseline) / baseline * 100`.
pub fn relative_improvement(candidate: f64, baseline: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::NonpositiveBaseline(baseline));
    }
    Ok((candidate - baseline) / baseline * 100.0)
}

/// Maps a CoT-relative position onto the full sequence:
/// `share_prompt + pos_in_cot * share_cot`.
pub fn full_sequence_position(share_prompt: f64, share_cot: f64, pos_in_cot: f64) -> Result<f64> {
    for (name, v) in [("share_prompt", share_prompt), ("share_cot", share_cot), ("pos_in_cot", pos_in_cot)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok(share_prompt + pos_in_cot * share_cot)
}

/// CoT text between the think tags.
pub fn cot_text(example: &SegmentedExample, tokenizer: &Tokenizer) -> Result<String> {
    tokenizer.decode(example.cot_inner_ids())
}

/// Relative token position of the first occurrence of `substring` inside
/// the CoT (tags excluded): token index / CoT token count.
pub fn locate_derivation(example: &SegmentedExample, substring: &str, tokenizer: &Tokenizer) -> Result<f64> {
    let text = cot_text(example, tokenizer)?;
    locate_in_cot(&text, substring, tokenizer).map(|(pos, _)| pos)
}

/// (relative position, byte offset of the match) within `cot`.
pub(crate) fn locate_in_cot(cot: &str, substring: &str, tokenizer: &Tokenizer) -> Result<(f64, usize)> {
    let offset = match (substring.is_empty(), cot.find(substring)) {
        (false, Some(o)) => o,
        _ => return Err(Error::SubstringNotFound(substring.to_string())),
    };
    let n_tokens = tokenizer.encode(cot).len();
    let idx = char_to_token(cot, tokenizer, offset)?;
    Ok((idx as f64 / n_tokens as f64, offset))
}

pub const REFLECTION_KEYWORDS: [&str; 16] = [
    "recheck",
    "rethink",
    "reassess",
    "reevaluate",
    "re-evaluate",
    "reevaluation",
    "re-examine",
    "reexamine",
    "reconsider",
    "reanalyze",
    "double-check",
    "check again",
    "think again",
    "verify again",
    "go over the steps",
    "wait",
];

/// Case-insensitive, non-overlapping keyword count over
/// `cot[..cutoff]`, taking the longest keyword at each position.
/// A match must end at or before `cutoff` (byte offset, clamped to the
/// text length).
pub fn count_self_reflection(cot: &str, cutoff: usize) -> usize {
    let bytes = cot.as_bytes();
    let end = cutoff.min(bytes.len());
    let mut count = 0;
    let mut i = 0;
    while i < end {
        let hit = REFLECTION_KEYWORDS
            .iter()
            .filter(|k| i + k.len() <= end && bytes[i..i + k.len()].eq_ignore_ascii_case(k.as_bytes()))
            .map(|k| k.len())
            .max();
        match hit {
            Some(len) => {
                count += 1;
                i += len;
            }
            None => i += 1,
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lsp: f64,
    pub accuracy: f64,
}

/// Reads an `lsp,accuracy` CSV (header required), sorted as given.
pub fn read_curve_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::BadFormat {
                kind: "curve csv",
                reason: e.to_string(),
            })
        })
        .collect()
}
