//! Entailment audit: ask a judge whether the CoT covers the prompt and the
//! answer, and where the final answer is first derived.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{count_self_reflection, full_sequence_position, locate_in_cot};
use crate::corpus::{segment, section_stats, SegmentedExample, Tokenizer};
use crate::{Error, Result};

pub const JUDGE_INSTRUCTION: &str = include_str!("judge_instruction.txt");

/// Fills the three payload slots of the judge instruction.
pub fn render_instruction(question: &str, t1: &str, t2: &str) -> String {
    // t1 and t2 may themselves contain brace placeholders, so substitute in
    // one pass over the template.
    let mut out = String::with_capacity(JUDGE_INSTRUCTION.len() + question.len() + t1.len() + t2.len());
    let mut rest = JUDGE_INSTRUCTION;
    while let Some(at) = rest.find('{') {
        out.push_str(&rest[..at]);
        let tail = &rest[at..];
        let (slot, skip) = if tail.starts_with("{question}") {
            (question, "{question}".len())
        } else if tail.starts_with("{t1}") {
            (t1, 4)
        } else if tail.starts_with("{t2}") {
            (t2, 4)
        } else {
            ("{", 1)
        };
        out.push_str(slot);
        rest = &tail[skip..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditVerdict {
    #[serde(rename = "is_question_fully_covered_by_t1")]
    pub prompt_covered: bool,
    #[serde(rename = "is_t2_fully_covered_by_t1")]
    pub answer_covered: bool,
    #[serde(rename = "is_t2_final_answer_considered_final_in_t1")]
    pub final_answer_match: bool,
    pub first_derivation: String,
}

/// Strict parse of a judge response: one JSON object with exactly the four
/// keys and correctly typed values.
pub fn parse_verdict(raw: &str) -> Result<AuditVerdict> {
    serde_json::from_str(raw.trim()).map_err(|e| Error::JudgeProtocol(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub id: String,
    pub instruction: String,
    pub question: String,
    pub t1: String,
    pub t2: String,
}

/// Judge transport. Returns the raw response text.
pub trait Judge: Sync {
    fn judge(&self, request: &JudgeRequest) -> Result<String>;
}

/// Canned responses keyed by example id. Never touches the network.
#[derive(Debug, Clone, Default)]
pub struct StubJudge {
    responses: BTreeMap<String, String>,
}

impl StubJudge {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        StubJudge { responses }
    }

    pub fn insert(&mut self, id: impl Into<String>, raw: impl Into<String>) {
        self.responses.insert(id.into(), raw.into());
    }

    /// JSON object mapping id to either a verdict object (re-serialized as
    /// the raw response) or a string replayed verbatim.
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(text)?;
        let responses = map
            .into_iter()
            .map(|(id, v)| {
                let raw = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                (id, raw)
            })
            .collect();
        Ok(StubJudge { responses })
    }
}

impl Judge for StubJudge {
    fn judge(&self, request: &JudgeRequest) -> Result<String> {
        self.responses
            .get(&request.id)
            .cloned()
            .ok_or_else(|| Error::JudgeTransport(format!("stub has no response for {:?}", request.id)))
    }
}

/// POSTs `{instruction, question, t1, t2}` as JSON and returns the body.
#[cfg(feature = "http-judge")]
pub struct HttpJudge {
    pub url: String,
    pub token: Option<String>,
    agent: ureq::Agent,
}

#[cfg(feature = "http-judge")]
impl HttpJudge {
    pub const URL_VAR: &'static str = "COTKD_JUDGE_URL";
    pub const TOKEN_VAR: &'static str = "COTKD_JUDGE_TOKEN";

    pub fn new(url: impl Into<String>, token: Option<String>) -> Self {
        HttpJudge {
            url: url.into(),
            token,
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var(Self::URL_VAR)
            .map_err(|_| Error::JudgeTransport(format!("{} is not set", Self::URL_VAR)))?;
        Ok(Self::new(url, std::env::var(Self::TOKEN_VAR).ok()))
    }
}

#[cfg(feature = "http-judge")]
impl Judge for HttpJudge {
    fn judge(&self, request: &JudgeRequest) -> Result<String> {
        let body = serde_json::json!({
            "instruction": request.instruction,
            "question": request.question,
            "t1": request.t1,
            "t2": request.t2,
        })
        .to_string();
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| Error::JudgeTransport(e.to_string()))?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| Error::JudgeTransport(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Extra attempts after a transport failure. Protocol errors are final.
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// Base delay, doubled on each retry.
    pub backoff_ms: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            max_retries: 2,
            max_in_flight: 4,
            backoff_ms: 250,
        }
    }
}

/// One sampled example as normalized linearized text (tags may be broken).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSample {
    pub id: String,
    pub text: String,
}

impl From<&SegmentedExample> for AuditSample {
    fn from(ex: &SegmentedExample) -> Self {
        AuditSample {
            id: ex.id.clone(),
            text: ex.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: String,
    pub malformed: bool,
    pub verdict: Option<AuditVerdict>,
    /// CoT-relative position of the first derivation, when it was located.
    pub position: Option<f64>,
    pub reflections: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n_samples: usize,
    pub n_malformed: usize,
    pub prompt_covered_pct: f64,
    pub answer_covered_pct: f64,
    pub final_answer_match_pct: f64,
    /// Examples whose derivation substring was found in the CoT.
    pub n_located: usize,
    pub mean_position_cot: Option<f64>,
    pub mean_position_full: Option<f64>,
    pub mean_reflections: Option<f64>,
    pub records: Vec<AuditRecord>,
}

struct Prepared {
    example: Option<SegmentedExample>,
    request: Option<JudgeRequest>,
}

fn prepare(sample: &AuditSample, tokenizer: &Tokenizer) -> Result<Prepared> {
    let ex = match segment(sample.id.clone(), &sample.text, tokenizer) {
        Ok(ex) => ex,
        Err(Error::MalformedThinkTags { .. }) => {
            return Ok(Prepared {
                example: None,
                request: None,
            })
        }
        Err(e) => return Err(e),
    };
    let span_text = |s: crate::corpus::Span| tokenizer.decode(&ex.token_ids[s.start..s.end]);
    let question = span_text(ex.prompt_span())?;
    let t1 = tokenizer.decode(ex.cot_inner_ids())?;
    let t2 = span_text(ex.answer_span())?;
    let request = JudgeRequest {
        id: sample.id.clone(),
        instruction: render_instruction(&question, &t1, &t2),
        question,
        t1,
        t2,
    };
    Ok(Prepared {
        example: Some(ex),
        request: Some(request),
    })
}

fn call_with_retries(judge: &dyn Judge, req: &JudgeRequest, cfg: &AuditConfig) -> Result<AuditVerdict> {
    let mut attempt = 0;
    loop {
        match judge.judge(req) {
            Ok(raw) => return parse_verdict(&raw),
            Err(Error::JudgeTransport(msg)) if attempt < cfg.max_retries => {
                let delay = cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                log_retry(&req.id, &msg);
                thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn log_retry(id: &str, msg: &str) {
    eprintln!("judge retry for {id}: {msg}");
}

/// Judges every sample and aggregates the coverage, position and
/// self-reflection columns. Samples with malformed think tags are not sent
/// to the judge and count as not covered on all three columns.
pub fn run_audit(
    samples: &[AuditSample],
    tokenizer: &Tokenizer,
    judge: &dyn Judge,
    config: &AuditConfig,
) -> Result<AuditReport> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.max_in_flight == 0 {
        return Err(Error::OutOfRange("max_in_flight must be at least 1".into()));
    }
    // deterministic order regardless of input order
    let mut order: Vec<&AuditSample> = samples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    if order.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::OutOfRange("duplicate sample ids".into()));
    }
    let prepared: Vec<Prepared> = order.iter().map(|s| prepare(s, tokenizer)).collect::<Result<_>>()?;

    let mut verdicts: Vec<Option<AuditVerdict>> = Vec::with_capacity(prepared.len());
    for chunk in prepared.chunks(config.max_in_flight) {
        let results: Vec<Result<Option<AuditVerdict>>> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|p| {
                    s.spawn(move || match &p.request {
                        Some(req) => call_with_retries(judge, req, config).map(Some),
                        None => Ok(None),
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::JudgeTransport("judge thread panicked".into()))))
                .collect()
        });
        for r in results {
            verdicts.push(r?);
        }
    }

    let mut records = Vec::with_capacity(prepared.len());
    let (mut n_prompt, mut n_answer, mut n_match) = (0usize, 0usize, 0usize);
    let mut positions = Vec::new();
    let mut reflections = Vec::new();
    for ((sample, prep), verdict) in order.iter().zip(&prepared).zip(verdicts) {
        let mut record = AuditRecord {
            id: sample.id.clone(),
            malformed: prep.example.is_none(),
            verdict: verdict.clone(),
            position: None,
            reflections: None,
        };
        if let (Some(v), Some(req)) = (&verdict, &prep.request) {
            n_prompt += v.prompt_covered as usize;
            n_answer += v.answer_covered as usize;
            n_match += v.final_answer_match as usize;
            // a derivation the judge did not copy verbatim is left unlocated
            if let Ok((pos, offset)) = locate_in_cot(&req.t1, &v.first_derivation, tokenizer) {
                let refl = count_self_reflection(&req.t1, offset);
                record.position = Some(pos);
                record.reflections = Some(refl);
                positions.push(pos);
                reflections.push(refl as f64);
            }
        }
        records.push(record);
    }

    let n = order.len();
    let pct = |k: usize| k as f64 / n as f64 * 100.0;
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mean_position_cot = mean(&positions);
    let segmented: Vec<SegmentedExample> = prepared.into_iter().filter_map(|p| p.example).collect();
    let mean_position_full = match (mean_position_cot, segmented.is_empty()) {
        (Some(p), false) => {
            let stats = section_stats(&segmented)?;
            Some(full_sequence_position(stats.prompt.share, stats.cot.share, p)?)
        }
        _ => None,
    };
    Ok(AuditReport {
        n_samples: n,
        n_malformed: records.iter().filter(|r| r.malformed).count(),
        prompt_covered_pct: pct(n_prompt),
        answer_covered_pct: pct(n_answer),
        final_answer_match_pct: pct(n_match),
        n_located: positions.len(),
        mean_position_cot,
        mean_position_full,
        mean_reflections: mean(&reflections),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenizerSpec;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn tok() -> Tokenizer {
        TokenizerSpec::default().build().unwrap()
    }

    fn verdict(p: bool, a: bool, m: bool, d: &str) -> String {
        serde_json::to_string(&AuditVerdict {
            prompt_covered: p,
            answer_covered: a,
            final_answer_match: m,
            first_derivation: d.into(),
        })
        .unwrap()
    }

    fn samples(n: usize) -> Vec<AuditSample> {
        (0..n)
            .map(|i| AuditSample {
                id: format!("ex{i:03}"),
                text: format!("Q{i}?<think>wait, so x = {i}. recheck</think>x = {i}"),
            })
            .collect()
    }

    #[test]
    fn instruction_has_slots_filled() {
        let s = render_instruction("Q?", "cot {t2}", "ans");
        assert!(s.contains("Q?") && s.contains("cot {t2}") && s.contains("ans"));
        assert!(!s.contains("{question}"));
        assert!(s.contains("\"first_derivation\": \"Therefore"));
        assert!(s.contains("exactly four keys"));
    }

    #[test]
    fn strict_verdict_schema() {
        let ok = verdict(true, false, true, "so");
        assert!(parse_verdict(&ok).is_ok());
        let five = r#"{"is_question_fully_covered_by_t1":true,"is_t2_fully_covered_by_t1":true,
            "is_t2_final_answer_considered_final_in_t1":true,"first_derivation":"","extra":1}"#;
        assert!(matches!(parse_verdict(five), Err(Error::JudgeProtocol(_))));
        let three = r#"{"is_question_fully_covered_by_t1":true,"is_t2_fully_covered_by_t1":true,"first_derivation":""}"#;
        assert!(matches!(parse_verdict(three), Err(Error::JudgeProtocol(_))));
        let stringly = r#"{"is_question_fully_covered_by_t1":"true","is_t2_fully_covered_by_t1":true,
            "is_t2_final_answer_considered_final_in_t1":true,"first_derivation":""}"#;
        assert!(parse_verdict(stringly).is_err());
        assert!(parse_verdict("not json").is_err());
        assert!(parse_verdict("").is_err());
    }

    #[test]
    fn all_true_stub_gives_full_coverage() {
        let ss = samples(100);
        let mut stub = StubJudge::default();
        for (i, s) in ss.iter().enumerate() {
            stub.insert(&s.id, verdict(true, true, true, &format!("x = {i}")));
        }
        let r = run_audit(&ss, &tok(), &stub, &AuditConfig::default()).unwrap();
        assert_eq!((r.prompt_covered_pct, r.answer_covered_pct, r.final_answer_match_pct), (100.0, 100.0, 100.0));
        assert_eq!(r.n_located, 100);
        // "wait" precedes the derivation, "recheck" follows it
        assert_eq!(r.mean_reflections, Some(1.0));
        let p = r.mean_position_cot.unwrap();
        assert!(p > 0.0 && p < 1.0);
        let f = r.mean_position_full.unwrap();
        assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn malformed_tags_count_as_uncovered() {
        let mut ss = samples(4);
        ss[2].text = "Q<think>a</think>b</think>c".into();
        let calls = AtomicUsize::new(0);
        struct Counting<'a>(&'a AtomicUsize);
        impl Judge for Counting<'_> {
            fn judge(&self, _: &JudgeRequest) -> Result<String> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok(verdict(true, true, true, ""))
            }
        }
        let r = run_audit(&ss, &tok(), &Counting(&calls), &AuditConfig::default()).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(r.n_malformed, 1);
        assert_eq!(r.prompt_covered_pct, 75.0);
        assert_eq!(r.n_located, 0);
        assert!(r.mean_position_cot.is_none());
    }

    #[test]
    fn protocol_error_propagates() {
        let ss = samples(3);
        let mut stub = StubJudge::default();
        for s in &ss {
            stub.insert(&s.id, verdict(true, true, true, ""));
        }
        stub.insert("ex001", "{\"is_question_fully_covered_by_t1\": tru");
        let err = run_audit(&ss, &tok(), &stub, &AuditConfig::default()).unwrap_err();
        assert!(matches!(err, Error::JudgeProtocol(_)));
    }

    #[test]
    fn transport_failures_are_retried() {
        struct Flaky(AtomicUsize);
        impl Judge for Flaky {
            fn judge(&self, _: &JudgeRequest) -> Result<String> {
                if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(Error::JudgeTransport("503".into()))
                } else {
                    Ok(verdict(false, true, true, ""))
                }
            }
        }
        let cfg = AuditConfig {
            max_retries: 2,
            max_in_flight: 1,
            backoff_ms: 1,
        };
        let j = Flaky(AtomicUsize::new(0));
        let r = run_audit(&samples(1), &tok(), &j, &cfg).unwrap();
        assert_eq!(r.prompt_covered_pct, 0.0);
        let j = Flaky(AtomicUsize::new(0));
        let cfg = AuditConfig { max_retries: 1, ..cfg };
        assert!(matches!(run_audit(&samples(1), &tok(), &j, &cfg), Err(Error::JudgeTransport(_))));
    }

    #[test]
    fn aggregation_is_order_and_concurrency_independent() {
        let ss = samples(17);
        let mut stub = StubJudge::default();
        for (i, s) in ss.iter().enumerate() {
            stub.insert(&s.id, verdict(i % 3 != 0, i % 2 == 0, true, &format!("x = {i}")));
        }
        let a = run_audit(&ss, &tok(), &stub, &AuditConfig { max_in_flight: 1, ..Default::default() }).unwrap();
        let mut rev = ss.clone();
        rev.reverse();
        let b = run_audit(&rev, &tok(), &stub, &AuditConfig { max_in_flight: 8, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stub_from_json_accepts_objects_and_strings() {
        let stub = StubJudge::from_json(&format!(r#"{{"a": {}, "b": "garbage"}}"#, verdict(true, true, false, ""))).unwrap();
        let req = |id: &str| JudgeRequest {
            id: id.into(),
            instruction: String::new(),
            question: String::new(),
            t1: String::new(),
            t2: String::new(),
        };
        assert!(!parse_verdict(&stub.judge(&req("a")).unwrap()).unwrap().final_answer_match);
        assert_eq!(stub.judge(&req("b")).unwrap(), "garbage");
        assert!(stub.judge(&req("c")).is_err());
    }
}
