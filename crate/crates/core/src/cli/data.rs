use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use cotkd::corpus::{
    self, generate_synthetic_corpus, synthetic::Planted, ChatTemplate, RawRecord, SectionStats, SegmentedExample,
    SyntheticCorpusConfig,
};
use cotkd::kdloss::encode_logits;
use cotkd::microlm::{decode_checkpoint, forward};
use cotkd::trainer::LOGITS_EXTENSION;

use super::manifest::OutputDir;
use super::read_tokenizer;

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n_examples: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub grammar_seed: u64,
    #[arg(long, default_value_t = 0.45)]
    pub derivation_position: f64,
    #[arg(long, default_value_t = 2)]
    pub n_reflections: usize,
    #[arg(long, default_value_t = 16)]
    pub mean_prompt_tokens: usize,
    #[arg(long, default_value_t = 48)]
    pub mean_cot_tokens: usize,
    #[arg(long, default_value_t = 10)]
    pub mean_answer_tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct PlantedLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    planted: &'a Planted,
}

pub fn synth(args: &SynthArgs, argv: &[String]) -> Result<()> {
    let cfg = SyntheticCorpusConfig {
        n_examples: args.n_examples,
        grammar_seed: args.grammar_seed,
        mean_prompt_tokens: args.mean_prompt_tokens,
        mean_cot_tokens: args.mean_cot_tokens,
        mean_answer_tokens: args.mean_answer_tokens,
        derivation_position: args.derivation_position,
        n_reflections: args.n_reflections,
        seed: args.seed,
    };
    let mut out = OutputDir::create(&args.out, "synth", argv)?;
    out.config(&cfg)?;
    out.seed("seed", cfg.seed);
    out.seed("grammar_seed", cfg.grammar_seed);
    let c = generate_synthetic_corpus(&cfg)?;
    let records = c.records.iter().map(serde_json::to_string).collect::<serde_json::Result<Vec<_>>>()?;
    out.write("records.jsonl", &lines(&records))?;
    let planted = c
        .examples
        .iter()
        .zip(&c.planted)
        .map(|(ex, p)| serde_json::to_string(&PlantedLine { id: &ex.id, planted: p }))
        .collect::<serde_json::Result<Vec<_>>>()?;
    out.write("planted.jsonl", &lines(&planted))?;
    let mut spec = c.tokenizer.to_json()?;
    spec.push('\n');
    out.write("tokenizer.json", spec.as_bytes())?;
    out.finish()?;
    Ok(())
}

fn lines(items: &[String]) -> Vec<u8> {
    let mut buf = String::new();
    for l in items {
        buf.push_str(l);
        buf.push('\n');
    }
    buf.into_bytes()
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw dialogue JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Tokenizer spec JSON.
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Keep examples strictly shorter than this many tokens.
    #[arg(long, default_value_t = 4096)]
    pub max_tokens: usize,
    #[arg(long)]
    pub n_valid: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct PrepareConfig<'a> {
    max_tokens: usize,
    n_valid: usize,
    seed: u64,
    template: &'a ChatTemplate,
}

#[derive(Serialize)]
struct Reject {
    line: usize,
    id: Option<String>,
    reason: String,
}

#[derive(Serialize)]
struct PrepareStats {
    n_input: usize,
    n_accepted: usize,
    n_rejected: usize,
    n_train: usize,
    n_valid: usize,
    sections: SectionStats,
}

pub fn prepare(args: &PrepareArgs, argv: &[String]) -> Result<()> {
    let tok = read_tokenizer(&args.tokenizer)?;
    let input = cotkd::io::read_lines(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let template = ChatTemplate::default();
    let mut out = OutputDir::create(&args.out, "prepare", argv)?;
    out.input(&args.input);
    out.input(&args.tokenizer);
    out.seed("split", args.seed);
    out.config(&PrepareConfig {
        max_tokens: args.max_tokens,
        n_valid: args.n_valid,
        seed: args.seed,
        template: &template,
    })?;

    let mut accepted: Vec<SegmentedExample> = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, line) in &input {
        let record = match RawRecord::from_json_line(line) {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject { line: *line_no, id: None, reason: e.to_string() });
                continue;
            }
        };
        let id = record.id.clone().unwrap_or_else(|| format!("line-{line_no}"));
        let reject = |reason: String| Reject { line: *line_no, id: Some(id.clone()), reason };
        if !seen.insert(id.clone()) {
            rejects.push(reject(format!("DuplicateId: {id}")));
            continue;
        }
        match corpus::prepare_record(id.clone(), &record, &template, &tok) {
            Ok(ex) if ex.len() >= args.max_tokens => {
                rejects.push(reject(format!("TooLong: {} tokens, limit {}", ex.len(), args.max_tokens)))
            }
            Ok(ex) => accepted.push(ex),
            Err(e) => rejects.push(reject(e.to_string())),
        }
    }
    if accepted.is_empty() {
        bail!("no examples survived preparation ({} rejected)", rejects.len());
    }
    let sections = corpus::section_stats(&accepted)?;
    let n_accepted = accepted.len();
    let (train, valid) = corpus::split_train_valid(accepted, args.n_valid, args.seed)?;
    if train.is_empty() {
        bail!("validation split consumed every accepted example");
    }
    let encode = |xs: &[SegmentedExample]| -> Result<Vec<u8>> {
        Ok(lines(&xs.iter().map(|e| e.to_json_line()).collect::<cotkd::Result<Vec<_>>>()?))
    };
    out.write("train.jsonl", &encode(&train)?)?;
    out.write("valid.jsonl", &encode(&valid)?)?;
    let reject_lines = rejects.iter().map(serde_json::to_string).collect::<serde_json::Result<Vec<_>>>()?;
    out.write("rejects.jsonl", &lines(&reject_lines))?;
    out.write_json(
        "stats.json",
        &PrepareStats {
            n_input: input.len(),
            n_accepted,
            n_rejected: rejects.len(),
            n_train: train.len(),
            n_valid: valid.len(),
            sections,
        },
    )?;
    out.finish()?;
    eprintln!(
        "prepared {} train / {} valid examples, {} rejected",
        train.len(),
        valid.len(),
        rejects.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct LogitsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Segmented JSONL.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn logits(args: &LogitsArgs, argv: &[String]) -> Result<()> {
    let bytes = std::fs::read(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let params = decode_checkpoint(&bytes)?;
    let examples = cotkd::io::read_segmented(&args.input, None)?;
    let mut out = OutputDir::create(&args.out, "logits", argv)?;
    out.input(&args.checkpoint);
    out.input(&args.input);
    out.config(params.config())?;
    for ex in &examples {
        if ex.id.contains(['/', '\\']) || ex.id.starts_with('.') {
            bail!("example id {:?} is not usable as a file name", ex.id);
        }
        let logits = forward(&params, &ex.token_ids)?;
        out.write(&format!("{}.{LOGITS_EXTENSION}", ex.id), &encode_logits(&logits)?)?;
    }
    out.finish()?;
    Ok(())
}
