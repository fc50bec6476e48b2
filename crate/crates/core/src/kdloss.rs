//! Composite distillation objective: hard NLL against ground-truth labels,
//! soft forward KL from the teacher distribution to the student's, and their
//! lambda blend. All quantities are in nats.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::supervision::SupervisionMask;
use crate::{Error, Result};

/// One logit row per label position, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMatrix {
    rows: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl LogitsMatrix {
    pub fn new(rows: usize, vocab: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * vocab {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {rows}x{vocab} logits",
                data.len()
            )));
        }
        if vocab < 2 {
            return Err(Error::ShapeMismatch(format!("vocabulary size {vocab} < 2")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Self { rows, vocab, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let vocab = rows.first().map_or(2, Vec::len);
        if rows.iter().any(|r| r.len() != vocab) {
            return Err(Error::ShapeMismatch("ragged logit rows".into()));
        }
        Self::new(rows.len(), vocab, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows `range`, as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows {
            return Err(Error::ShapeMismatch(format!(
                "row range {start}..{end} of {} rows",
                self.rows
            )));
        }
        Ok(Self {
            rows: end - start,
            vocab: self.vocab,
            data: self.data[start * self.vocab..end * self.vocab].to_vec(),
        })
    }

    pub(crate) fn from_raw(rows: usize, vocab: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * vocab);
        Self { rows, vocab, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub soft: f64,
    pub hard: f64,
    pub combined: f64,
    pub lambda: f64,
    pub n_supervised: usize,
    pub reduction: Reduction,
}

pub const DEFAULT_LAMBDA: f64 = 0.5;

fn max_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = max_of(logits);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `z - logsumexp(z)`, computed without forming probabilities.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = max_of(logits);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// KL(softmax(teacher) || softmax(student)) for one row.
pub fn kl_row(teacher: &[f64], student: &[f64]) -> f64 {
    let lt = log_softmax(teacher);
    let ls = log_softmax(student);
    let kl: f64 = lt
        .iter()
        .zip(&ls)
        .map(|(&a, &b)| if a == f64::NEG_INFINITY { 0.0 } else { a.exp() * (a - b) })
        .sum();
    // rounding can leave a tiny negative residue when the rows coincide
    kl.max(0.0)
}

pub fn nll_row(student: &[f64], label: usize) -> f64 {
    -log_softmax(student)[label]
}

fn check_mask(rows: usize, mask: &SupervisionMask) -> Result<()> {
    if mask.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} bits for {rows} logit rows",
            mask.len()
        )));
    }
    Ok(())
}

fn reduce(total: f64, n: usize, reduction: Reduction) -> Result<f64> {
    match reduction {
        Reduction::Sum => Ok(total),
        Reduction::Mean if n == 0 => Err(Error::EmptyMask),
        Reduction::Mean => Ok(total / n as f64),
    }
}

fn check_labels(student: &LogitsMatrix, labels: &[u32], mask: &SupervisionMask) -> Result<()> {
    if labels.len() != student.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            student.rows()
        )));
    }
    check_mask(student.rows(), mask)?;
    for (&label, &on) in labels.iter().zip(&mask.bits) {
        if on && label as usize >= student.vocab() {
            return Err(Error::LabelOutOfRange {
                label,
                vocab: student.vocab(),
            });
        }
    }
    Ok(())
}

fn check_pair(teacher: &LogitsMatrix, student: &LogitsMatrix) -> Result<()> {
    if teacher.rows() != student.rows() || teacher.vocab() != student.vocab() {
        return Err(Error::ShapeMismatch(format!(
            "teacher {}x{} vs student {}x{}",
            teacher.rows(),
            teacher.vocab(),
            student.rows(),
            student.vocab()
        )));
    }
    Ok(())
}

/// Negative log-likelihood of the labels over masked positions.
pub fn hard_loss(
    student: &LogitsMatrix,
    labels: &[u32],
    mask: &SupervisionMask,
    reduction: Reduction,
) -> Result<f64> {
    check_labels(student, labels, mask)?;
    let total: f64 = (0..student.rows())
        .filter(|&t| mask.bits[t])
        .map(|t| nll_row(student.row(t), labels[t] as usize))
        .sum();
    reduce(total, mask.count(), reduction)
}

/// Forward KL from teacher to student over masked positions.
pub fn soft_loss(
    teacher: &LogitsMatrix,
    student: &LogitsMatrix,
    mask: &SupervisionMask,
    reduction: Reduction,
) -> Result<f64> {
    check_pair(teacher, student)?;
    check_mask(student.rows(), mask)?;
    let total: f64 = (0..student.rows())
        .filter(|&t| mask.bits[t])
        .map(|t| kl_row(teacher.row(t), student.row(t)))
        .sum();
    reduce(total, mask.count(), reduction)
}

/// `lambda * soft + (1 - lambda) * hard`, both under `reduction`.
pub fn combined_loss(
    teacher: &LogitsMatrix,
    student: &LogitsMatrix,
    labels: &[u32],
    mask: &SupervisionMask,
    lambda: f64,
    reduction: Reduction,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let hard = hard_loss(student, labels, mask, reduction)?;
    let soft = soft_loss(teacher, student, mask, reduction)?;
    Ok(blend(soft, hard, lambda, mask.count(), reduction))
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

pub fn blend(soft: f64, hard: f64, lambda: f64, n_supervised: usize, reduction: Reduction) -> LossBreakdown {
    LossBreakdown {
        soft,
        hard,
        combined: lambda * soft + (1.0 - lambda) * hard,
        lambda,
        n_supervised,
        reduction,
    }
}

// ---------------------------------------------------------------------------
// Precomputed teacher logits files
//
//   magic "KDLG" | version u32 | vocab u32 | rows u32 | dtype u32 (0 = f32)
//   rows * vocab little-endian f32 values, row-major
// ---------------------------------------------------------------------------

pub const LOGITS_MAGIC: &[u8; 4] = b"KDLG";
pub const LOGITS_VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;

pub fn write_logits<W: Write>(mut w: W, logits: &LogitsMatrix) -> Result<()> {
    let fits = |n: usize| u32::try_from(n).map_err(|_| Error::ShapeMismatch("logits too large".into()));
    w.write_all(LOGITS_MAGIC)?;
    for v in [LOGITS_VERSION, fits(logits.vocab)?, fits(logits.rows)?, DTYPE_F32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(logits.data.len() * 4);
    for &v in &logits.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn encode_logits(logits: &LogitsMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_logits(&mut out, logits)?;
    Ok(out)
}

/// Decodes a complete logits file held in memory.
pub fn decode_logits(bytes: &[u8]) -> Result<LogitsMatrix> {
    let bad = |reason: String| Error::BadFormat {
        kind: "logits",
        reason,
    };
    if bytes.len() < 20 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != LOGITS_MAGIC {
        return Err(bad("wrong magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let (version, vocab, rows, dtype) = (word(0), word(1) as usize, word(2) as usize, word(3));
    if version != LOGITS_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    if dtype != DTYPE_F32 {
        return Err(bad(format!("unsupported dtype {dtype}")));
    }
    let body = &bytes[20..];
    let expected = rows
        .checked_mul(vocab)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(bad(format!("body has {} bytes, header implies {expected}", body.len())));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    LogitsMatrix::new(rows, vocab, data)
}

pub fn read_logits<R: Read>(mut r: R) -> Result<LogitsMatrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_logits(&bytes)
}
