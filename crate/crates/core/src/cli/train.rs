use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use cotkd::microlm::{decode_checkpoint, encode_checkpoint, ModelConfig};
use cotkd::supervision::{compose, SupervisionRegime, TruncationPolicy};
use cotkd::trainer::{self, train_curve_csv, validation_curve_csv, Teacher, TrainConfig};

use super::manifest::OutputDir;
use super::{read_text, read_tokenizer};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config, TOML or JSON (by extension).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `train.regime`, e.g. `cot+a`.
    #[arg(long)]
    pub regime: Option<SupervisionRegime>,
    /// Overrides `train.truncation`: none, left, right or lsp:<p>.
    #[arg(long)]
    pub truncate: Option<TruncationPolicy>,
    /// Overrides `train.lambda`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Also write the supervision mask of every training example.
    #[arg(long)]
    pub dump_masks: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub logits_dir: Option<PathBuf>,
}

/// Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_file: PathBuf,
    #[serde(default)]
    pub valid_file: Option<PathBuf>,
    /// When present, examples are checked against this tokenizer.
    #[serde(default)]
    pub tokenizer: Option<PathBuf>,
    pub student: ModelConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.train_file);
        cfg.valid_file.iter_mut().for_each(rebase);
        cfg.tokenizer.iter_mut().for_each(rebase);
        cfg.teacher.checkpoint.iter_mut().for_each(rebase);
        cfg.teacher.logits_dir.iter_mut().for_each(rebase);
        Ok(cfg)
    }
}

pub fn train(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(r) = args.regime {
        cfg.train.regime = r;
    }
    if let Some(t) = args.truncate {
        cfg.train.truncation = t;
    }
    if let Some(l) = args.lambda {
        cfg.train.lambda = l;
    }
    cfg.train.validate().context("invalid training config")?;
    cfg.student.validate().context("invalid student config")?;
    if cfg.teacher.checkpoint.is_some() && cfg.teacher.logits_dir.is_some() {
        bail!("teacher: set at most one of checkpoint and logits_dir");
    }

    let tok = cfg.tokenizer.as_deref().map(read_tokenizer).transpose()?;
    if let Some(t) = &tok {
        if t.vocab_size() != cfg.student.vocab_size {
            bail!("student vocab_size {} does not match tokenizer ({})", cfg.student.vocab_size, t.vocab_size());
        }
    }
    let load = |p: &Path| {
        cotkd::io::read_segmented(p, tok.as_ref()).with_context(|| format!("reading {}", p.display()))
    };
    let train_set = load(&cfg.train_file)?;
    let valid = cfg.valid_file.as_deref().map(load).transpose()?.unwrap_or_default();

    let mut out = OutputDir::create(&args.out, "train", argv)?;
    out.config(&cfg)?;
    out.seed("data", cfg.train.seed);
    out.seed("model", cfg.student.seed);
    out.input(&args.config);
    out.input(&cfg.train_file);
    if let Some(v) = &cfg.valid_file {
        out.input(v);
    }

    let teacher_params = match &cfg.teacher.checkpoint {
        Some(p) => {
            out.input(p);
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let params = decode_checkpoint(&bytes)?;
            if params.config().vocab_size != cfg.student.vocab_size {
                bail!("teacher vocab_size {} differs from student {}", params.config().vocab_size, cfg.student.vocab_size);
            }
            Some(params)
        }
        None => None,
    };
    let teacher = match (&teacher_params, &cfg.teacher.logits_dir) {
        (Some(p), _) => Teacher::Model(p),
        (None, Some(dir)) => Teacher::LogitsDir(dir),
        (None, None) => Teacher::None,
    };

    if args.dump_masks {
        let mut lines = String::new();
        for ex in &train_set {
            if let Ok((_, mask)) = compose(ex, cfg.train.truncation, cfg.train.regime) {
                lines.push_str(&mask.to_json_line(&ex.id)?);
                lines.push('\n');
            }
        }
        out.write("masks.jsonl", lines.as_bytes())?;
    }

    let outcome = trainer::train(&train_set, &valid, teacher, &cfg.student, &cfg.train)?;
    let report = &outcome.report;
    out.write_json("report.json", report)?;
    out.write("train_loss.csv", train_curve_csv(report)?.as_bytes())?;
    out.write("valid_loss.csv", validation_curve_csv(report)?.as_bytes())?;
    out.write("best.ckpt", &encode_checkpoint(&outcome.best)?)?;
    out.write("last.ckpt", &encode_checkpoint(&outcome.last)?)?;
    out.finish()?;
    eprintln!(
        "{}: {} steps, final train loss {:.4}, selected step {}",
        report.label, report.optimizer_steps, report.final_train_loss, report.selected.step
    );
    Ok(())
}
