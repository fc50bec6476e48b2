use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use cotkd::cost::{grid_gpu_hours, lsp_cost_curve, CostConstants, GridBudget, GridSpec, ModelShape, DEFAULT_LSP_GRID};

use super::manifest::OutputDir;
use super::{csv_bytes, read_text};

#[derive(Debug, Args)]
pub struct CostArgs {
    #[command(subcommand)]
    pub mode: CostMode,
}

#[derive(Debug, Subcommand)]
pub enum CostMode {
    /// FLOPs and peak memory per step across LSP values.
    Curve {
        /// `4b`, `8b` or a JSON file with n_params, n_layers, d_model, n_heads.
        #[arg(long)]
        student: String,
        /// Frozen teacher in the same form; omitted for plain fine-tuning.
        #[arg(long)]
        teacher: Option<String>,
        #[arg(long, default_value_t = 4096)]
        max_seq_len: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// Comma-separated LSP values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// GPU-hour accounting for an experiment grid.
    #[command(allow_negative_numbers = true)]
    Grid {
        /// TOML with `[[rows]]` tables (name, runs, train_hours, train_gpus,
        /// eval_hours, eval_gpus, n_benchmarks). Overrides the flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        runs: Option<f64>,
        #[arg(long)]
        train_hours: Option<f64>,
        #[arg(long)]
        train_gpus: Option<f64>,
        #[arg(long)]
        eval_hours: Option<f64>,
        #[arg(long)]
        eval_gpus: Option<f64>,
        #[arg(long)]
        n_benchmarks: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn shape(arg: &str, out: &mut OutputDir) -> Result<ModelShape> {
    Ok(match arg.to_ascii_lowercase().as_str() {
        "4b" => ModelShape::dense_4b(),
        "8b" => ModelShape::dense_8b(),
        _ => {
            let path = Path::new(arg);
            out.input(path);
            serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing model shape {arg}"))?
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRow {
    name: String,
    #[serde(flatten)]
    spec: GridSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    rows: Vec<GridRow>,
}

#[derive(Serialize)]
struct GridLine {
    name: String,
    runs: f64,
    train_gpu_hours: f64,
    eval_gpu_hours: f64,
    total_gpu_hours: f64,
}

impl GridLine {
    fn new(name: &str, b: &GridBudget) -> Self {
        GridLine {
            name: name.to_string(),
            runs: b.spec.runs,
            train_gpu_hours: b.train_gpu_hours,
            eval_gpu_hours: b.eval_gpu_hours,
            total_gpu_hours: b.total_gpu_hours,
        }
    }
}

pub fn cost(args: &CostArgs, argv: &[String]) -> Result<()> {
    match &args.mode {
        CostMode::Curve {
            student,
            teacher,
            max_seq_len,
            batch,
            grid,
            out,
        } => {
            let mut dir = OutputDir::create(out, "cost curve", argv)?;
            let s = shape(student, &mut dir)?;
            let t = teacher.as_deref().map(|t| shape(t, &mut dir)).transpose()?;
            let grid = grid.clone().unwrap_or_else(|| DEFAULT_LSP_GRID.to_vec());
            let k = CostConstants::default();
            let rows = lsp_cost_curve(&s, t.as_ref(), *max_seq_len, *batch, &grid, &k)?;
            dir.config(&serde_json::json!({
                "student": s, "teacher": t, "max_seq_len": max_seq_len, "batch": batch, "grid": grid, "constants": k,
            }))?;
            dir.write("cost_curve.csv", &csv_bytes(&rows)?)?;
            dir.finish()?;
            println!("{} rows", rows.len());
        }
        CostMode::Grid {
            spec,
            runs,
            train_hours,
            train_gpus,
            eval_hours,
            eval_gpus,
            n_benchmarks,
            out,
        } => {
            let mut dir = OutputDir::create(out, "cost grid", argv)?;
            let rows = match spec {
                Some(path) => {
                    dir.input(path);
                    let f: GridFile = toml::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
                    f.rows
                }
                None => {
                    let need = |v: &Option<f64>, name: &str| v.with_context(|| format!("--{name} is required without --spec"));
                    vec![GridRow {
                        name: "grid".into(),
                        spec: GridSpec {
                            runs: need(runs, "runs")?,
                            train_hours: need(train_hours, "train-hours")?,
                            train_gpus: need(train_gpus, "train-gpus")?,
                            eval_hours: need(eval_hours, "eval-hours")?,
                            eval_gpus: need(eval_gpus, "eval-gpus")?,
                            n_benchmarks: need(n_benchmarks, "n-benchmarks")?,
                        },
                    }]
                }
            };
            if rows.is_empty() {
                bail!("grid spec has no rows");
            }
            let budgets = rows
                .iter()
                .map(|r| grid_gpu_hours(&r.spec).with_context(|| format!("row {}", r.name)))
                .collect::<Result<Vec<_>>>()?;
            let mut lines: Vec<GridLine> = rows.iter().zip(&budgets).map(|(r, b)| GridLine::new(&r.name, b)).collect();
            let total = GridLine {
                name: "total".into(),
                runs: lines.iter().map(|l| l.runs).sum(),
                train_gpu_hours: lines.iter().map(|l| l.train_gpu_hours).sum(),
                eval_gpu_hours: lines.iter().map(|l| l.eval_gpu_hours).sum(),
                total_gpu_hours: lines.iter().map(|l| l.total_gpu_hours).sum(),
            };
            println!("{} GPU hours over {} runs", total.total_gpu_hours, total.runs);
            lines.push(total);
            dir.config(&rows)?;
            dir.write("grid.csv", &csv_bytes(&lines)?)?;
            dir.write_json("grid.json", &budgets)?;
            dir.finish()?;
        }
    }
    Ok(())
}
