//! Distillation runs: per-example truncation and masking, gradient
//! accumulation, AdamW steps, validation on a cadence, min-validation
//! checkpoint selection, and loss-curve analytics.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SegmentedExample;
use crate::kdloss::{self, LogitsMatrix, LossBreakdown, Reduction};
use crate::microlm::{self, AdamWConfig, ModelConfig, ModelParams, OptimizerState};
use crate::supervision::{compose, SupervisionMask, SupervisionRegime, TruncatedExample, TruncationPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_betas")]
    pub betas: [f64; 2],
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_grad_accum")]
    pub grad_accum_steps: usize,
    #[serde(default = "default_micro_batch")]
    pub micro_batch: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_regime")]
    pub regime: SupervisionRegime,
    #[serde(default)]
    pub truncation: TruncationPolicy,
    /// Data-order seed. Model initialization uses the student config's seed.
    pub seed: u64,
    /// Extra validation every this many optimizer steps; 0 keeps only the
    /// per-epoch and end-of-training evaluations.
    #[serde(default)]
    pub eval_every: usize,
}

fn default_epochs() -> usize {
    2
}
fn default_lr() -> f64 {
    AdamWConfig::default().lr
}
fn default_weight_decay() -> f64 {
    AdamWConfig::default().weight_decay
}
fn default_betas() -> [f64; 2] {
    let d = AdamWConfig::default();
    [d.beta1, d.beta2]
}
fn default_eps() -> f64 {
    AdamWConfig::default().eps
}
fn default_grad_accum() -> usize {
    8
}
fn default_micro_batch() -> usize {
    1
}
fn default_lambda() -> f64 {
    kdloss::DEFAULT_LAMBDA
}
fn default_regime() -> SupervisionRegime {
    SupervisionRegime::PCotA
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            betas: default_betas(),
            eps: default_eps(),
            grad_accum_steps: default_grad_accum(),
            micro_batch: default_micro_batch(),
            lambda: default_lambda(),
            regime: default_regime(),
            truncation: TruncationPolicy::None,
            seed,
            eval_every: 0,
        }
    }

    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.grad_accum_steps
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidTrainConfig("epochs must be positive".into()));
        }
        if self.effective_batch() == 0 {
            return Err(Error::InvalidTrainConfig(
                "micro_batch and grad_accum_steps must be positive".into(),
            ));
        }
        kdloss::check_lambda(self.lambda)?;
        self.optimizer().validate()?;
        if let TruncationPolicy::Lsp(p) = self.truncation {
            TruncationPolicy::lsp(p)?;
        }
        Ok(())
    }
}

/// Source of teacher logits.
#[derive(Debug, Clone, Copy)]
pub enum Teacher<'a> {
    /// Pure supervised fine-tuning; only valid with `lambda == 0`.
    None,
    /// A frozen model run on exactly the tokens the student sees.
    Model(&'a ModelParams),
    /// Precomputed full-sequence logits, one `<id>.logits` file per example.
    /// Only prefix truncations can be served from these.
    LogitsDir(&'a Path),
}

pub const LOGITS_EXTENSION: &str = "logits";

pub fn logits_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{LOGITS_EXTENSION}"))
}

impl Teacher<'_> {
    fn logits(&self, example: &SegmentedExample, truncated: &TruncatedExample) -> Result<Option<LogitsMatrix>> {
        match *self {
            Teacher::None => Ok(None),
            Teacher::Model(p) => microlm::forward(p, &truncated.token_ids).map(Some),
            Teacher::LogitsDir(dir) => {
                let path = logits_path(dir, &example.id);
                let bytes = std::fs::read(&path)
                    .map_err(|e| Error::TeacherUnavailable(format!("{}: {e}", path.display())))?;
                let full = kdloss::decode_logits(&bytes)?;
                if full.rows() != example.len().saturating_sub(1) {
                    return Err(Error::ShapeMismatch(format!(
                        "{} has {} rows for a {}-token example",
                        path.display(),
                        full.rows(),
                        example.len()
                    )));
                }
                if truncated.kept_range.start != 0 {
                    return Err(Error::TeacherUnavailable(format!(
                        "precomputed logits cannot serve a suffix starting at token {}",
                        truncated.kept_range.start
                    )));
                }
                full.slice_rows(0, truncated.token_ids.len().saturating_sub(1)).map(Some)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub soft: f64,
    pub hard: f64,
    pub combined: f64,
    /// Supervised label positions in the step's batch.
    pub n_supervised: usize,
    pub n_examples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Token-weighted mean over all supervised validation positions.
    pub soft: f64,
    pub hard: f64,
    pub combined: f64,
    pub n_supervised: usize,
    pub n_examples: usize,
    pub skipped_degenerate: usize,
    /// Greedy next-token accuracy on answer-span labels of the untruncated
    /// sequences.
    pub answer_accuracy: f64,
    pub answer_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub result: EvalResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedCheckpoint {
    pub step: usize,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub label: String,
    pub regime: SupervisionRegime,
    pub truncation: TruncationPolicy,
    pub lambda: f64,
    pub n_params: usize,
    pub optimizer_steps: usize,
    pub train_examples: usize,
    pub skipped_degenerate: usize,
    pub train: Vec<StepRecord>,
    pub validation: Vec<ValidationRecord>,
    pub selected: SelectedCheckpoint,
    /// Last value of the rolling mean (window [`LOSS_WINDOW`]) of the
    /// combined training loss.
    pub final_train_loss: f64,
}

pub const LOSS_WINDOW: usize = 100;

impl TrainReport {
    pub fn series(&self, pick: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
        self.train.iter().map(pick).collect()
    }
}

/// Everything a run produces. Wall time is kept apart from the report so
/// reports stay byte-reproducible.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best: ModelParams,
    pub last: ModelParams,
    pub wall_seconds: f64,
}

pub fn run_label(regime: SupervisionRegime, truncation: TruncationPolicy) -> String {
    format!("{} / {}", regime.label(), truncation)
}

struct Prepared {
    truncated: TruncatedExample,
    mask: SupervisionMask,
    teacher: Option<LogitsMatrix>,
}

fn prepare(
    corpus: &[SegmentedExample],
    teacher: &Teacher,
    cfg: &TrainConfig,
) -> Result<(Vec<Prepared>, usize)> {
    let mut out = Vec::with_capacity(corpus.len());
    let mut skipped = 0;
    for ex in corpus {
        match compose(ex, cfg.truncation, cfg.regime) {
            Ok((truncated, mask)) => {
                let teacher = teacher.logits(ex, &truncated)?;
                out.push(Prepared {
                    truncated,
                    mask,
                    teacher,
                });
            }
            Err(Error::DegenerateRegime { .. } | Error::EmptyResult { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

fn check_fits(corpus: &[SegmentedExample], config: &ModelConfig) -> Result<()> {
    if let Some(ex) = corpus.iter().find(|e| e.len() > config.max_seq_len) {
        return Err(Error::InvalidTrainConfig(format!(
            "example {} has {} tokens, model max_seq_len is {}",
            ex.id,
            ex.len(),
            config.max_seq_len
        )));
    }
    Ok(())
}

/// Greedy answer-token accuracy over untruncated examples: (correct, total).
pub fn answer_accuracy(params: &ModelParams, examples: &[SegmentedExample]) -> Result<(usize, usize)> {
    let (mut correct, mut total) = (0, 0);
    for ex in examples {
        let ans = ex.answer_span();
        // label row t predicts token t + 1
        let rows: Vec<usize> = (ans.start.max(1)..ans.end).map(|tok| tok - 1).collect();
        if rows.is_empty() {
            continue;
        }
        let logits = microlm::forward_rows(params, &ex.token_ids, &rows)?;
        for (r, &t) in rows.iter().enumerate() {
            let row = logits.row(r);
            let argmax = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            correct += usize::from(argmax == ex.token_ids[t + 1] as usize);
            total += 1;
        }
    }
    Ok((correct, total))
}

fn evaluate_prepared(
    params: &ModelParams,
    prepared: &[Prepared],
    corpus: &[SegmentedExample],
    skipped: usize,
    lambda: f64,
) -> Result<EvalResult> {
    let (mut soft, mut hard, mut n) = (0.0, 0.0, 0usize);
    for p in prepared {
        let logits = microlm::forward(params, &p.truncated.token_ids)?;
        let labels = &p.truncated.token_ids[1..];
        hard += kdloss::hard_loss(&logits, labels, &p.mask, Reduction::Sum)?;
        if let Some(t) = &p.teacher {
            soft += kdloss::soft_loss(t, &logits, &p.mask, Reduction::Sum)?;
        }
        n += p.mask.count();
    }
    let (correct, total) = answer_accuracy(params, corpus)?;
    let denom = n.max(1) as f64;
    let (soft, hard) = (soft / denom, hard / denom);
    Ok(EvalResult {
        soft,
        hard,
        combined: lambda * soft + (1.0 - lambda) * hard,
        n_supervised: n,
        n_examples: prepared.len(),
        skipped_degenerate: skipped,
        answer_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        answer_tokens: total,
    })
}

/// Validation metrics under the run's regime and truncation.
pub fn evaluate(
    params: &ModelParams,
    corpus: &[SegmentedExample],
    teacher: Teacher,
    cfg: &TrainConfig,
) -> Result<EvalResult> {
    check_fits(corpus, params.config())?;
    let (prepared, skipped) = prepare(corpus, &teacher, cfg)?;
    evaluate_prepared(params, &prepared, corpus, skipped, cfg.lambda)
}

fn mean_breakdowns(items: &[LossBreakdown]) -> (f64, f64, f64, usize) {
    let k = items.len().max(1) as f64;
    let soft = items.iter().map(|b| b.soft).sum::<f64>() / k;
    let hard = items.iter().map(|b| b.hard).sum::<f64>() / k;
    let combined = items.iter().map(|b| b.combined).sum::<f64>() / k;
    (soft, hard, combined, items.iter().map(|b| b.n_supervised).sum())
}

/// Runs a full distillation job. The student is initialized from
/// `student`; `valid` may be empty, in which case the final parameters are
/// selected.
pub fn train(
    train_set: &[SegmentedExample],
    valid: &[SegmentedExample],
    teacher: Teacher,
    student: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = microlm::init_model(student)?;
    train_from(params, train_set, valid, teacher, cfg)
}

/// Like [`train`], starting from existing parameters.
pub fn train_from(
    mut params: ModelParams,
    train_set: &[SegmentedExample],
    valid: &[SegmentedExample],
    teacher: Teacher,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let started = std::time::Instant::now();
    cfg.validate()?;
    if matches!(teacher, Teacher::None) && cfg.lambda > 0.0 {
        return Err(Error::InvalidTrainConfig(format!(
            "lambda {} needs a teacher; use lambda 0 for plain fine-tuning",
            cfg.lambda
        )));
    }
    if let Teacher::Model(t) = teacher {
        if t.config().vocab_size != params.config().vocab_size {
            return Err(Error::ShapeMismatch(format!(
                "teacher vocabulary {} vs student {}",
                t.config().vocab_size,
                params.config().vocab_size
            )));
        }
    }
    check_fits(train_set, params.config())?;
    check_fits(valid, params.config())?;

    let (prepared, skipped) = prepare(train_set, &teacher, cfg)?;
    if prepared.is_empty() {
        return Err(Error::AllExamplesDegenerate {
            regime: cfg.regime.to_string(),
            truncation: cfg.truncation.to_string(),
        });
    }
    let (valid_prepared, valid_skipped) = prepare(valid, &teacher, cfg)?;

    let mut opt = OptimizerState::new(params.len(), cfg.optimizer());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let batch = cfg.effective_batch();

    let mut history = Vec::new();
    let mut validation: Vec<ValidationRecord> = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut step = 0;
    let mut grads = vec![0.0; params.len()];

    let mut validate_now = |params: &ModelParams, step: usize, epoch: usize, validation: &mut Vec<ValidationRecord>| -> Result<()> {
        if valid.is_empty() || validation.last().is_some_and(|v| v.step == step) {
            return Ok(());
        }
        let result = evaluate_prepared(params, &valid_prepared, valid, valid_skipped, cfg.lambda)?;
        validation.push(ValidationRecord { step, epoch, result });
        // strict comparison keeps the earliest of tied minima
        if best.as_ref().is_none_or(|b| result.combined < b.0) {
            best = Some((result.combined, step, params.clone()));
        }
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut parts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = &prepared[i];
                let (b, g) = microlm::loss_and_grads(
                    &params,
                    &p.truncated.token_ids,
                    &p.mask,
                    cfg.lambda,
                    p.teacher.as_ref(),
                    Reduction::Mean,
                )?;
                for (acc, v) in grads.iter_mut().zip(&g) {
                    *acc += v;
                }
                parts.push(b);
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            microlm::adamw_step(&mut params.data, &grads, &mut opt)?;
            step += 1;
            let (soft, hard, combined, n_supervised) = mean_breakdowns(&parts);
            history.push(StepRecord {
                step,
                epoch,
                soft,
                hard,
                combined,
                n_supervised,
                n_examples: chunk.len(),
            });
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                validate_now(&params, step, epoch, &mut validation)?;
            }
        }
        validate_now(&params, step, epoch, &mut validation)?;
    }

    let combined: Vec<f64> = history.iter().map(|s| s.combined).collect();
    let final_train_loss = *smooth_curve(&combined, LOSS_WINDOW)?.last().expect("at least one step");
    let (selected, best_params) = match best {
        Some((loss, at, p)) => (
            SelectedCheckpoint {
                step: at,
                validation_loss: Some(loss),
            },
            p,
        ),
        None => (
            SelectedCheckpoint {
                step,
                validation_loss: None,
            },
            params.clone(),
        ),
    };
    let report = TrainReport {
        label: run_label(cfg.regime, cfg.truncation),
        regime: cfg.regime,
        truncation: cfg.truncation,
        lambda: cfg.lambda,
        n_params: params.len(),
        optimizer_steps: step,
        train_examples: prepared.len(),
        skipped_degenerate: skipped,
        train: history,
        validation,
        selected,
        final_train_loss,
    };
    Ok(TrainOutcome {
        report,
        best: best_params,
        last: params,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Rolling mean; the first `window - 1` positions average the available
/// prefix.
pub fn smooth_curve(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::OutOfRange("smoothing window must be at least 1".into()));
    }
    let out = (0..values.len())
        .map(|i| {
            let n = (i + 1).min(window);
            values[i + 1 - n..=i].iter().sum::<f64>() / n as f64
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    /// Percent.
    pub avg_rel_diff: f64,
    /// Percent.
    pub last_rel_diff: f64,
    /// Percent per aligned step.
    pub series: Vec<f64>,
}

/// `(candidate - reference) / reference * 100` per step; negative means
/// the candidate has lower loss.
pub fn relative_difference(candidate: &[f64], reference: &[f64]) -> Result<CurveStats> {
    if candidate.len() != reference.len() || candidate.is_empty() {
        return Err(Error::LengthMismatch {
            candidate: candidate.len(),
            reference: reference.len(),
        });
    }
    let mut series = Vec::with_capacity(candidate.len());
    for (step, (&c, &r)) in candidate.iter().zip(reference).enumerate() {
        if r.is_nan() || r <= 0.0 {
            return Err(Error::NonpositiveReference { step });
        }
        series.push((c - r) / r * 100.0);
    }
    Ok(CurveStats {
        avg_rel_diff: series.iter().sum::<f64>() / series.len() as f64,
        last_rel_diff: *series.last().expect("nonempty"),
        series,
    })
}

/// Train/validation curves as CSV text.
pub fn train_curve_csv(report: &TrainReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.train {
        w.serialize(r).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn validation_curve_csv(report: &TrainReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "step",
        "epoch",
        "soft",
        "hard",
        "combined",
        "n_supervised",
        "answer_accuracy",
    ])
    .map_err(csv_err)?;
    for v in &report.validation {
        let r = &v.result;
        w.write_record([
            v.step.to_string(),
            v.epoch.to_string(),
            r.soft.to_string(),
            r.hard.to_string(),
            r.combined.to_string(),
            r.n_supervised.to_string(),
            r.answer_accuracy.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::BadFormat {
        kind: "csv",
        reason: e.to_string(),
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::BadFormat {
        kind: "csv",
        reason: e.to_string(),
    })?;
    String::from_utf8(bytes).map_err(|_| Error::InvalidUtf8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticCorpusConfig};

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_curve(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(smooth_curve(&[3.0, 1.0, 4.0], 1).unwrap(), vec![3.0, 1.0, 4.0]);
        assert_eq!(smooth_curve(&[2.5; 300], 100).unwrap(), vec![2.5; 300]);
        assert!(smooth_curve(&[1.0], 0).is_err());
        let long: Vec<f64> = (0..500).map(|i| (i % 7) as f64).collect();
        let s = smooth_curve(&long, 100).unwrap();
        let direct = long[400..500].iter().sum::<f64>() / 100.0;
        assert!((s[499] - direct).abs() < 1e-9);
    }

    #[test]
    fn relative_difference_examples() {
        let z = relative_difference(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(z.series, vec![0.0, 0.0]);
        let d = relative_difference(&[0.9; 5], &[1.0; 5]).unwrap();
        assert!((d.avg_rel_diff + 10.0).abs() < 1e-9 && (d.last_rel_diff + 10.0).abs() < 1e-9);
        assert!(matches!(relative_difference(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(
            relative_difference(&[1.0, 1.0], &[1.0, 0.0]),
            Err(Error::NonpositiveReference { step: 1 })
        ));
    }

    fn small_corpus(n: usize) -> (Vec<SegmentedExample>, ModelConfig) {
        let c = generate_synthetic_corpus(&SyntheticCorpusConfig {
            n_examples: n,
            mean_prompt_tokens: 16,
            mean_cot_tokens: 24,
            mean_answer_tokens: 8,
            ..SyntheticCorpusConfig::default()
        })
        .unwrap();
        let vocab = c.tokenizer.build().unwrap().vocab_size();
        let max = c.examples.iter().map(|e| e.len()).max().unwrap();
        let mut m = ModelConfig::new(vocab, 16, 1, 2, max, 11);
        m.d_ff = 32;
        (c.examples, m)
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(0);
        assert!(c.validate().is_ok());
        c.lambda = 1.5;
        assert!(matches!(c.validate(), Err(Error::InvalidLambda(_))));
        let mut c = TrainConfig::new(0);
        c.grad_accum_steps = 0;
        assert!(c.validate().is_err());
        let parsed: TrainConfig = toml::from_str("seed = 3\nregime = \"cot+a\"\ntruncation = \"lsp:0.5\"").unwrap();
        assert_eq!(parsed.regime, SupervisionRegime::CotA);
        assert_eq!(parsed.truncation, TruncationPolicy::Lsp(0.5));
        assert_eq!(parsed.epochs, 2);
        assert!(toml::from_str::<TrainConfig>("epochs = 2").is_err());
    }

    #[test]
    fn sft_descends_and_is_deterministic() {
        let (ex, m) = small_corpus(24);
        let mut cfg = TrainConfig::new(5);
        cfg.lambda = 0.0;
        cfg.lr = 3e-3;
        cfg.grad_accum_steps = 2;
        cfg.epochs = 3;
        let a = train(&ex[4..], &ex[..4], Teacher::None, &m, &cfg).unwrap();
        let b = train(&ex[4..], &ex[..4], Teacher::None, &m, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.best.data, b.best.data);
        let first = a.report.train.first().unwrap().combined;
        let last = a.report.train.last().unwrap().combined;
        assert!(a.report.train.iter().all(|s| s.combined.is_finite()));
        assert!(last < first, "{first} -> {last}");
        assert_eq!(a.report.validation.len(), 3);
        let min = a.report.validation.iter().map(|v| v.result.combined).fold(f64::INFINITY, f64::min);
        assert_eq!(a.report.selected.validation_loss, Some(min));
    }

    #[test]
    fn frozen_self_teacher_keeps_zero_soft_loss() {
        let (ex, m) = small_corpus(6);
        let teacher = microlm::init_model(&m).unwrap();
        let mut cfg = TrainConfig::new(1);
        cfg.lambda = 1.0;
        cfg.lr = 0.0;
        cfg.weight_decay = 0.0;
        cfg.grad_accum_steps = 1;
        let out = train(&ex, &[], Teacher::Model(&teacher), &m, &cfg).unwrap();
        assert!(out.report.train.iter().all(|s| s.soft.abs() < 1e-12));
        assert_eq!(out.last.data, teacher.data);
    }

    #[test]
    fn degenerate_examples_are_skipped() {
        let (ex, m) = small_corpus(6);
        let mut cfg = TrainConfig::new(1);
        cfg.lambda = 0.0;
        cfg.regime = SupervisionRegime::A;
        cfg.truncation = TruncationPolicy::lsp(0.1).unwrap();
        let err = train(&ex, &[], Teacher::None, &m, &cfg).unwrap_err();
        assert!(matches!(err, Error::AllExamplesDegenerate { .. }));
        cfg.truncation = TruncationPolicy::None;
        let ok = train(&ex, &[], Teacher::None, &m, &cfg).unwrap();
        assert_eq!(ok.report.skipped_degenerate, 0);
        assert!(matches!(
            train(&ex, &[], Teacher::None, &m, &TrainConfig { lambda: 0.5, ..cfg }),
            Err(Error::InvalidTrainConfig(_))
        ));
    }

    #[test]
    fn accumulation_matches_batch_mean() {
        let (ex, m) = small_corpus(4);
        let params = microlm::init_model(&m).unwrap();
        let mut cfg = TrainConfig::new(9);
        cfg.lambda = 0.0;
        cfg.lr = 1e-2;
        cfg.grad_accum_steps = 4;
        cfg.epochs = 1;
        let out = train_from(params.clone(), &ex, &[], Teacher::None, &cfg).unwrap();

        let mut mean = vec![0.0; params.len()];
        for e in &ex {
            let mask = crate::supervision::build_mask(e, cfg.regime).unwrap();
            let (_, g) = microlm::loss_and_grads(&params, &e.token_ids, &mask, 0.0, None, Reduction::Mean).unwrap();
            for (a, v) in mean.iter_mut().zip(g) {
                *a += v / 4.0;
            }
        }
        let mut manual = params.clone();
        let mut opt = OptimizerState::new(params.len(), cfg.optimizer());
        microlm::adamw_step(&mut manual.data, &mean, &mut opt).unwrap();
        let worst = manual.data.iter().zip(&out.last.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }
}
