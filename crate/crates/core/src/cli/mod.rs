//! Command-line front end. Every subcommand writes into an output
//! directory and finishes by writing `manifest.json` there.

mod analyze;
mod cost;
mod data;
pub mod manifest;
mod train;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use manifest::{diff_outputs, read_manifest};

#[derive(Debug, Parser)]
#[command(name = "cotkd", version, about = "Segment-aware distillation on chain-of-thought corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic reasoning corpus with planted derivations.
    Synth(data::SynthArgs),
    /// Segment, filter and split a raw dialogue corpus.
    Prepare(data::PrepareArgs),
    /// Train a micro student under one regime and truncation.
    Train(train::TrainArgs),
    /// Precompute full-sequence logits from a checkpoint.
    Logits(data::LogitsArgs),
    /// Post-hoc analytics over curves, runs and corpora.
    Analyze(analyze::AnalyzeArgs),
    /// Analytic FLOPs, memory and GPU-hour accounting.
    Cost(cost::CostArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail unless every output is byte-identical to the recorded one.
    #[arg(long)]
    pub check: bool,
}

/// Runs one invocation. `argv` excludes the program name.
pub fn run(argv: &[String]) -> Result<()> {
    let mut full = vec!["cotkd".to_string()];
    full.extend_from_slice(argv);
    let cli = Cli::parse_from(&full);
    dispatch(cli.command, argv)
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Synth(a) => data::synth(&a, argv),
        Command::Prepare(a) => data::prepare(&a, argv),
        Command::Train(a) => train::train(&a, argv),
        Command::Logits(a) => data::logits(&a, argv),
        Command::Analyze(a) => analyze::analyze(&a, argv),
        Command::Cost(a) => cost::cost(&a, argv),
        Command::Replay(a) => replay(&a),
    }
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let recorded = read_manifest(&args.manifest)?;
    let mut argv = recorded.argv.clone();
    let out_at = argv.iter().position(|a| a == "--out").context("manifest argv has no --out")?;
    let out_dir = match &args.out {
        Some(o) => absolute(o)?,
        None => Path::new(&recorded.cwd).join(&argv[out_at + 1]),
    };
    argv[out_at + 1] = out_dir.display().to_string();
    std::env::set_current_dir(&recorded.cwd).with_context(|| format!("entering {}", recorded.cwd))?;
    let mut full = vec!["cotkd".to_string()];
    full.extend(argv.iter().cloned());
    let cli = Cli::try_parse_from(&full)?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("refusing to replay a replay");
    }
    dispatch(cli.command, &argv)?;
    if args.check {
        let fresh = read_manifest(&out_dir.join(manifest::MANIFEST_FILE))?;
        let diff = diff_outputs(&recorded, &fresh);
        if !diff.is_empty() {
            bail!("replay outputs differ: {}", diff.join(", "));
        }
    }
    Ok(())
}

fn absolute(path: &Path) -> Result<PathBuf> {
    Ok(if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir()?.join(path)
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_tokenizer(path: &Path) -> Result<cotkd::corpus::Tokenizer> {
    let spec = cotkd::corpus::TokenizerSpec::from_json(&read_text(path)?)
        .with_context(|| format!("parsing tokenizer {}", path.display()))?;
    Ok(spec.build()?)
}

fn csv_bytes<T: serde::Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}
