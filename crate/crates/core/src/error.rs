use std::io;

use thiserror::Error;

/// Errors produced by the library. Variant names follow the failure classes
/// each operation documents, so callers (and the rejects file written by
/// `prepare`) can report them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyDialogue: no user or no assistant message remains after dropping system turns")]
    EmptyDialogue,
    #[error("MalformedThinkTags: expected exactly one ordered <think>/</think> pair, found {opens} open and {closes} close tags")]
    MalformedThinkTags { opens: usize, closes: usize },
    #[error("InsufficientExamples: asked for {requested} validation examples from a corpus of {available}")]
    InsufficientExamples { requested: usize, available: usize },
    #[error("EmptyCorpus")]
    EmptyCorpus,
    #[error("OffsetOutOfRange: offset {offset} is outside text of length {len}")]
    OffsetOutOfRange { offset: usize, len: usize },
    #[error("invalid tokenizer spec: {0}")]
    InvalidTokenizer(String),
    #[error("token id {0} is not in the vocabulary")]
    UnknownTokenId(u32),
    #[error("decoded tokens are not valid UTF-8")]
    InvalidUtf8,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid segmented example: {0}")]
    InvalidExample(String),

    #[error("DegenerateRegime: regime {regime} selects no label positions")]
    DegenerateRegime { regime: String },
    #[error("EmptyResult: truncation {policy} keeps no tokens of a length-{len} sequence")]
    EmptyResult { policy: String, len: usize },
    #[error("invalid regime {0:?} (expected a, p+a, cot, cot+a, p+cot or p+cot+a)")]
    InvalidRegime(String),
    #[error("invalid truncation policy {0:?} (expected none, left, right or lsp:<p> with p in (0,1])")]
    InvalidTruncation(String),

    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("EmptyMask: mean reduction over zero supervised positions")]
    EmptyMask,
    #[error("label {label} out of range for vocabulary of size {vocab}")]
    LabelOutOfRange { label: u32, vocab: usize },
    #[error("lambda must lie in [0,1], got {0}")]
    InvalidLambda(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("SequenceTooLong: {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("bad {kind} file: {reason}")]
    BadFormat { kind: &'static str, reason: String },

    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("every training example is degenerate under regime {regime} and truncation {truncation}")]
    AllExamplesDegenerate { regime: String, truncation: String },
    #[error("teacher unavailable: {0}")]
    TeacherUnavailable(String),
    #[error("LengthMismatch: candidate has {candidate} points, reference has {reference}")]
    LengthMismatch { candidate: usize, reference: usize },
    #[error("NonpositiveReference at step {step}")]
    NonpositiveReference { step: usize },

    #[error("TooFewPoints: need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("x values must be strictly increasing and finite")]
    NotIncreasing,
    #[error("NonpositiveDenominator: {0}")]
    NonpositiveDenominator(f64),
    #[error("NonpositiveBaseline: {0}")]
    NonpositiveBaseline(f64),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("SubstringNotFound: {0:?}")]
    SubstringNotFound(String),
    #[error("JudgeProtocolError: {0}")]
    JudgeProtocol(String),
    #[error("judge transport failed: {0}")]
    JudgeTransport(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
