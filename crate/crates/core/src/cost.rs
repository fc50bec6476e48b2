//! Analytic compute models: per-step training FLOPs, peak memory and
//! GPU-hour accounting for experiment grids. These are estimates for trend
//! analysis, not measurements.

use serde::{Deserialize, Serialize};

use crate::supervision::lead_span_len;
use crate::{Error, Result};

/// The handful of shape numbers the estimators need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub n_params: f64,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
}

impl ModelShape {
    /// 36-layer, 2560-wide dense decoder with roughly 4B parameters.
    pub fn dense_4b() -> Self {
        Self {
            n_params: 4.02e9,
            n_layers: 36,
            d_model: 2560,
            n_heads: 32,
        }
    }

    /// 36-layer, 4096-wide dense decoder with roughly 8B parameters.
    pub fn dense_8b() -> Self {
        Self {
            n_params: 8.19e9,
            n_layers: 36,
            d_model: 4096,
            n_heads: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_params.is_finite() && self.n_params > 0.0) || self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::OutOfRange(format!("model shape must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Tunable constants of the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConstants {
    /// FLOPs per parameter per token for forward plus backward.
    pub dense_flops: f64,
    /// Coefficient of `n_layers * d_model * T^2` for attention scores.
    pub attention_flops: f64,
    pub param_bytes: f64,
    pub grad_bytes: f64,
    /// Bytes per optimizer moment (AdamW keeps two).
    pub moment_bytes: f64,
    /// Bytes per frozen teacher parameter.
    pub teacher_param_bytes: f64,
    /// Activation bytes per `n_layers * d_model * T * batch`.
    pub activation_linear: f64,
    /// Activation bytes per `n_layers * n_heads * T^2 * batch`.
    pub activation_quadratic: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        Self {
            dense_flops: 6.0,
            attention_flops: 12.0,
            param_bytes: 4.0,
            grad_bytes: 4.0,
            moment_bytes: 4.0,
            teacher_param_bytes: 2.0,
            activation_linear: 34.0,
            activation_quadratic: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub flops: f64,
    pub peak_memory: f64,
    pub static_memory: f64,
    pub activation_memory: f64,
    /// The quadratic (attention) part of `activation_memory`.
    pub attention_activation_term: f64,
}

/// Dense term only: `dense_flops * N * T * B`.
pub fn dense_flops(model: &ModelShape, seq_len: usize, batch: usize, k: &CostConstants) -> f64 {
    k.dense_flops * model.n_params * seq_len as f64 * batch as f64
}

/// `6·N·T·B + 12·L·d·T²·B` with the default constants.
pub fn flops_per_step(model: &ModelShape, seq_len: usize, batch: usize, k: &CostConstants) -> f64 {
    let t = seq_len as f64;
    dense_flops(model, seq_len, batch, k) + k.attention_flops * model.n_layers as f64 * model.d_model as f64 * t * t * batch as f64
}

/// Parameters, gradients and both AdamW moments.
pub fn static_memory(model: &ModelShape, k: &CostConstants) -> f64 {
    model.n_params * (k.param_bytes + k.grad_bytes + 2.0 * k.moment_bytes)
}

pub fn memory_estimate(model: &ModelShape, seq_len: usize, batch: usize, k: &CostConstants) -> CostEstimate {
    let (t, b) = (seq_len as f64, batch as f64);
    let l = model.n_layers as f64;
    let linear = k.activation_linear * l * model.d_model as f64 * t * b;
    let quadratic = k.activation_quadratic * l * model.n_heads as f64 * t * t * b;
    let static_memory = static_memory(model, k);
    CostEstimate {
        flops: flops_per_step(model, seq_len, batch, k),
        peak_memory: static_memory + linear + quadratic,
        static_memory,
        activation_memory: linear + quadratic,
        attention_activation_term: quadratic,
    }
}

/// Student training step plus a frozen teacher: the teacher adds its
/// weights to static memory and a forward pass (a third of the training
/// FLOPs) to compute; its activations are transient and not counted.
pub fn distillation_estimate(student: &ModelShape, teacher: &ModelShape, seq_len: usize, batch: usize, k: &CostConstants) -> CostEstimate {
    let mut est = memory_estimate(student, seq_len, batch, k);
    let teacher_static = teacher.n_params * k.teacher_param_bytes;
    est.static_memory += teacher_static;
    est.peak_memory += teacher_static;
    est.flops += flops_per_step(teacher, seq_len, batch, k) / 3.0;
    est
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LspCostRow {
    pub lsp: f64,
    pub seq_len: usize,
    pub flops: f64,
    pub memory: f64,
    pub attention_term: f64,
}

pub const DEFAULT_LSP_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Cost curve over LSP values for a full sequence budget `max_seq_len`.
pub fn lsp_cost_curve(
    student: &ModelShape,
    teacher: Option<&ModelShape>,
    max_seq_len: usize,
    batch: usize,
    grid: &[f64],
    k: &CostConstants,
) -> Result<Vec<LspCostRow>> {
    student.validate()?;
    if let Some(t) = teacher {
        t.validate()?;
    }
    grid.iter()
        .map(|&p| {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::OutOfRange(format!("lsp value {p} outside (0, 1]")));
            }
            let seq_len = lead_span_len(p, max_seq_len);
            let est = match teacher {
                Some(t) => distillation_estimate(student, t, seq_len, batch, k),
                None => memory_estimate(student, seq_len, batch, k),
            };
            Ok(LspCostRow {
                lsp: p,
                seq_len,
                flops: est.flops,
                memory: est.peak_memory,
                attention_term: est.attention_activation_term,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub runs: f64,
    pub train_hours: f64,
    pub train_gpus: f64,
    pub eval_hours: f64,
    pub eval_gpus: f64,
    pub n_benchmarks: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBudget {
    #[serde(flatten)]
    pub spec: GridSpec,
    pub train_gpu_hours_per_run: f64,
    pub eval_gpu_hours_per_run: f64,
    pub gpu_hours_per_run: f64,
    pub train_gpu_hours: f64,
    pub eval_gpu_hours: f64,
    pub total_gpu_hours: f64,
}

/// `runs * (train_hours*train_gpus + n_benchmarks*eval_hours*eval_gpus)`.
pub fn grid_gpu_hours(spec: &GridSpec) -> Result<GridBudget> {
    let fields = [
        ("runs", spec.runs),
        ("train_hours", spec.train_hours),
        ("train_gpus", spec.train_gpus),
        ("eval_hours", spec.eval_hours),
        ("eval_gpus", spec.eval_gpus),
        ("n_benchmarks", spec.n_benchmarks),
    ];
    for (name, v) in fields {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::OutOfRange(format!("{name} = {v} must be a nonnegative number")));
        }
    }
    let train = spec.train_hours * spec.train_gpus;
    let eval = spec.n_benchmarks * spec.eval_hours * spec.eval_gpus;
    Ok(GridBudget {
        spec: *spec,
        train_gpu_hours_per_run: train,
        eval_gpu_hours_per_run: eval,
        gpu_hours_per_run: train + eval,
        train_gpu_hours: spec.runs * train,
        eval_gpu_hours: spec.runs * eval,
        total_gpu_hours: spec.runs * (train + eval),
    })
}
