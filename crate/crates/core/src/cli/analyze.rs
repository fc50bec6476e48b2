use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use cotkd::analysis::{
    self, count_self_reflection, find_knee, full_sequence_position, read_curve_csv, relative_improvement,
    retention_ratio, AuditConfig, AuditSample, Judge, StubJudge,
};
use cotkd::corpus::{self, linearize, normalize_tags, ChatTemplate, RawRecord};
use cotkd::trainer::{relative_difference, smooth_curve, TrainReport, LOSS_WINDOW};

use super::manifest::OutputDir;
use super::{csv_bytes, read_text, read_tokenizer};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub mode: Mode,
}

#[derive(Debug, Subcommand)]
pub enum Mode {
    /// Knee of an `lsp,accuracy` curve.
    Knee {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ratio of two metrics, given as numbers or run directories.
    #[command(allow_negative_numbers = true)]
    Retention {
        #[arg(long)]
        half: String,
        #[arg(long)]
        full: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smoothed training-loss curves of two runs and their relative difference.
    Curves {
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// combined, soft or hard.
        #[arg(long, default_value = "combined")]
        series: String,
        #[arg(long, default_value_t = LOSS_WINDOW)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Judge-driven coverage audit over raw dialogue records.
    Audit {
        /// Raw dialogue JSONL.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// `stub:<verdicts.json>` or `http` (endpoint from the environment).
        #[arg(long)]
        judge: String,
        /// Audit a seeded random sample of this size instead of every record.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = AuditConfig::default().max_in_flight)]
        max_in_flight: usize,
        #[arg(long, default_value_t = AuditConfig::default().max_retries)]
        max_retries: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derivation positions and reflection counts from known substrings.
    Positions {
        /// Segmented JSONL.
        #[arg(long)]
        input: PathBuf,
        /// JSONL of `{"id": ..., "derivation": ...}`.
        #[arg(long)]
        derivations: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn analyze(args: &AnalyzeArgs, argv: &[String]) -> Result<()> {
    match &args.mode {
        Mode::Knee { input, threshold, out } => knee(input, *threshold, out, argv),
        Mode::Retention { half, full, out } => retention(half, full, out, argv),
        Mode::Curves {
            candidate,
            reference,
            series,
            window,
            out,
        } => curves(candidate, reference, series, *window, out, argv),
        Mode::Audit {
            input,
            tokenizer,
            judge,
            sample,
            seed,
            max_in_flight,
            max_retries,
            out,
        } => {
            let cfg = AuditConfig {
                max_in_flight: *max_in_flight,
                max_retries: *max_retries,
                ..AuditConfig::default()
            };
            audit(input, tokenizer, judge, *sample, *seed, cfg, out, argv)
        }
        Mode::Positions {
            input,
            derivations,
            tokenizer,
            out,
        } => positions(input, derivations, tokenizer, out, argv),
    }
}

fn knee(input: &Path, threshold: f64, out_dir: &Path, argv: &[String]) -> Result<()> {
    let points = read_curve_csv(&read_text(input)?)?;
    let xs: Vec<f64> = points.iter().map(|p| p.lsp).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    let result = find_knee(&xs, &ys, threshold)?;
    let mut out = OutputDir::create(out_dir, "analyze knee", argv)?;
    out.input(input);
    out.config(&serde_json::json!({ "threshold": threshold }))?;
    out.write_json("knee.json", &result)?;
    out.finish()?;
    match result.knee_x {
        Some(x) => println!("knee at lsp {x}"),
        None => println!("no knee"),
    }
    Ok(())
}

/// A number, or a run directory whose selected validation answer accuracy
/// is used.
fn metric(arg: &str, out: &mut OutputDir) -> Result<f64> {
    if let Ok(v) = arg.parse::<f64>() {
        return Ok(v);
    }
    let path = Path::new(arg).join("report.json");
    out.input(&path);
    let report: TrainReport = serde_json::from_str(&read_text(&path)?)?;
    report
        .validation
        .iter()
        .find(|v| v.step == report.selected.step)
        .map(|v| v.result.answer_accuracy)
        .with_context(|| format!("{} has no validation record for the selected step", path.display()))
}

#[derive(Serialize)]
struct Retention {
    half: f64,
    full: f64,
    ratio: f64,
    improvement_pct: f64,
}

fn retention(half: &str, full: &str, out_dir: &Path, argv: &[String]) -> Result<()> {
    let mut out = OutputDir::create(out_dir, "analyze retention", argv)?;
    let (h, f) = (metric(half, &mut out)?, metric(full, &mut out)?);
    let r = Retention {
        half: h,
        full: f,
        ratio: retention_ratio(h, f)?,
        improvement_pct: relative_improvement(h, f)?,
    };
    out.write_json("retention.json", &r)?;
    out.finish()?;
    println!("retention {:.4}", r.ratio);
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    candidate: f64,
    reference: f64,
    rel_diff_pct: f64,
}

fn curves(candidate: &Path, reference: &Path, series: &str, window: usize, out_dir: &Path, argv: &[String]) -> Result<()> {
    let mut out = OutputDir::create(out_dir, "analyze curves", argv)?;
    let mut load = |dir: &Path| -> Result<Vec<f64>> {
        let path = dir.join("report.json");
        out.input(&path);
        let report: TrainReport = serde_json::from_str(&read_text(&path)?)?;
        let raw = match series {
            "combined" => report.series(|r| r.combined),
            "soft" => report.series(|r| r.soft),
            "hard" => report.series(|r| r.hard),
            other => bail!("unknown series {other:?} (expected combined, soft or hard)"),
        };
        Ok(smooth_curve(&raw, window)?)
    };
    let (c, r) = (load(candidate)?, load(reference)?);
    let stats = relative_difference(&c, &r)?;
    let rows: Vec<CurveRow> = (0..c.len())
        .map(|i| CurveRow {
            step: i + 1,
            candidate: c[i],
            reference: r[i],
            rel_diff_pct: stats.series[i],
        })
        .collect();
    out.config(&serde_json::json!({ "series": series, "window": window }))?;
    out.write("curves.csv", &csv_bytes(&rows)?)?;
    out.write_json(
        "curves.json",
        &serde_json::json!({ "avg_rel_diff_pct": stats.avg_rel_diff, "last_rel_diff_pct": stats.last_rel_diff }),
    )?;
    out.finish()?;
    println!("avg rel diff {:.3}%, last {:.3}%", stats.avg_rel_diff, stats.last_rel_diff);
    Ok(())
}

fn make_judge(spec: &str) -> Result<Box<dyn Judge>> {
    if let Some(path) = spec.strip_prefix("stub:") {
        return Ok(Box::new(StubJudge::from_json(&read_text(Path::new(path))?)?));
    }
    if spec == "http" {
        #[cfg(feature = "http-judge")]
        return Ok(Box::new(analysis::HttpJudge::from_env()?));
        #[cfg(not(feature = "http-judge"))]
        bail!("built without the http-judge feature");
    }
    bail!("unknown judge {spec:?} (expected stub:<path> or http)")
}

#[allow(clippy::too_many_arguments)]
fn audit(
    input: &Path,
    tokenizer: &Path,
    judge: &str,
    sample: Option<usize>,
    seed: u64,
    cfg: AuditConfig,
    out_dir: &Path,
    argv: &[String],
) -> Result<()> {
    let tok = read_tokenizer(tokenizer)?;
    let template = ChatTemplate::default();
    let mut samples = Vec::new();
    for (line_no, line) in cotkd::io::read_lines(input)? {
        let record = RawRecord::from_json_line(&line).with_context(|| format!("{}:{line_no}", input.display()))?;
        let text = normalize_tags(&linearize(&record, &template).with_context(|| format!("{}:{line_no}", input.display()))?);
        let id = record.id.unwrap_or_else(|| format!("line-{line_no}"));
        samples.push(AuditSample { id, text });
    }
    if let Some(n) = sample {
        samples = corpus::split_train_valid(samples, n, seed)?.1;
    }
    let judge_impl = make_judge(judge)?;
    let mut out = OutputDir::create(out_dir, "analyze audit", argv)?;
    if let Some(path) = judge.strip_prefix("stub:") {
        out.input(Path::new(path));
    }
    out.input(input);
    out.input(tokenizer);
    out.seed("sample", seed);
    out.config(&cfg)?;
    let report = analysis::run_audit(&samples, &tok, judge_impl.as_ref(), &cfg)?;
    out.write_json("audit.json", &report)?;
    out.finish()?;
    println!(
        "P covered {:.1}%, A covered {:.1}%, answer match {:.1}% over {} samples",
        report.prompt_covered_pct, report.answer_covered_pct, report.final_answer_match_pct, report.n_samples
    );
    Ok(())
}

#[derive(Deserialize)]
struct DerivationLine {
    id: String,
    derivation: String,
}

#[derive(Serialize)]
struct PositionRow {
    id: String,
    position: f64,
    reflections: usize,
}

#[derive(Serialize)]
struct PositionSummary {
    n: usize,
    missing: usize,
    mean_position_cot: f64,
    mean_position_full: f64,
    mean_reflections: f64,
}

fn positions(input: &Path, derivations: &Path, tokenizer: &Path, out_dir: &Path, argv: &[String]) -> Result<()> {
    let tok = read_tokenizer(tokenizer)?;
    let examples = cotkd::io::read_segmented(input, Some(&tok))?;
    let mut wanted = BTreeMap::new();
    for (line_no, line) in cotkd::io::read_lines(derivations)? {
        let d: DerivationLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{line_no}", derivations.display()))?;
        wanted.insert(d.id, d.derivation);
    }
    let mut rows = Vec::new();
    let mut missing = 0;
    for ex in &examples {
        let Some(sub) = wanted.get(&ex.id) else {
            missing += 1;
            continue;
        };
        let cot = analysis::cot_text(ex, &tok)?;
        match cot.find(sub.as_str()).filter(|_| !sub.is_empty()) {
            Some(offset) => rows.push(PositionRow {
                id: ex.id.clone(),
                position: analysis::locate_derivation(ex, sub, &tok)?,
                reflections: count_self_reflection(&cot, offset),
            }),
            None => missing += 1,
        }
    }
    if rows.is_empty() {
        bail!("no derivation substring was found in any example");
    }
    let n = rows.len() as f64;
    let mean_cot = rows.iter().map(|r| r.position).sum::<f64>() / n;
    let stats = corpus::section_stats(&examples)?;
    let summary = PositionSummary {
        n: rows.len(),
        missing,
        mean_position_cot: mean_cot,
        mean_position_full: full_sequence_position(stats.prompt.share, stats.cot.share, mean_cot)?,
        mean_reflections: rows.iter().map(|r| r.reflections as f64).sum::<f64>() / n,
    };
    let mut out = OutputDir::create(out_dir, "analyze positions", argv)?;
    out.input(input);
    out.input(derivations);
    out.input(tokenizer);
    out.write("positions.csv", &csv_bytes(&rows)?)?;
    out.write_json("positions.json", &summary)?;
    out.finish()?;
    println!(
        "mean derivation position {:.3} of CoT, {:.3} of sequence",
        summary.mean_position_cot, summary.mean_position_full
    );
    Ok(())
}
