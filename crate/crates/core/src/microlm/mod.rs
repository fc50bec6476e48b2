//! Micro causal transformer with exact backpropagation, used for both the
//! teacher and the student, plus AdamW and a binary checkpoint format.
//!
//! Parameters live in one flat `f64` buffer; [`Layout`] names the tensors
//! inside it. A length-T input yields T−1 label rows: the model runs over
//! tokens `0..T-1` and row t predicts token t+1.

mod checkpoint;
mod model;
mod optim;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{forward, forward_rows, loss_and_grads};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// MLP hidden width; 0 means `4 * d_model`.
    #[serde(default)]
    pub d_ff: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    pub seed: u64,
}

fn default_init_std() -> f64 {
    0.02
}

/// Upper bound on model size accepted by [`ModelConfig::validate`].
pub const MAX_PARAMS: u128 = 1 << 28;

impl ModelConfig {
    pub fn new(vocab_size: usize, d_model: usize, n_layers: usize, n_heads: usize, max_seq_len: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            d_model,
            n_layers,
            n_heads,
            max_seq_len,
            d_ff: 0,
            init_std: default_init_std(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.max_seq_len == 0 {
            return bad("d_model, n_layers, n_heads and max_seq_len must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad(format!("init_std {} must be positive", self.init_std));
        }
        match self.checked_n_params() {
            Some(n) if n <= MAX_PARAMS => Ok(()),
            _ => bad(format!("model exceeds {MAX_PARAMS} parameters")),
        }
    }

    /// Parameter count without overflow, before any layout is built.
    fn checked_n_params(&self) -> Option<u128> {
        let (v, t, l) = (self.vocab_size as u128, self.max_seq_len as u128, self.n_layers as u128);
        let (d, f) = (self.d_model as u128, self.ff_dim() as u128);
        let per_layer = d.checked_mul(d)?.checked_mul(4)?.checked_add(d.checked_mul(f)?.checked_mul(2)?)?.checked_add(5 * d + f)?;
        v.checked_mul(d)?
            .checked_mul(2)?
            .checked_add(t.checked_mul(d)?)?
            .checked_add(l.checked_mul(per_layer)?)?
            .checked_add(2 * d)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        if self.d_ff == 0 {
            self.d_model.saturating_mul(4)
        } else {
            self.d_ff
        }
    }

    pub fn n_params(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor in the flat parameter buffer, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) w_out: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorInfo { name, shape, offset });
            offset
        };
        let (d, f) = (c.d_model, c.ff_dim());
        let tok_emb = push("tok_emb".into(), vec![c.vocab_size, d]);
        let pos_emb = push("pos_emb".into(), vec![c.max_seq_len, d]);
        let layers = (0..c.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: push(format!("layers.{l}.ln1.gain"), vec![d]),
                ln1_b: push(format!("layers.{l}.ln1.bias"), vec![d]),
                wq: push(format!("layers.{l}.attn.wq"), vec![d, d]),
                wk: push(format!("layers.{l}.attn.wk"), vec![d, d]),
                wv: push(format!("layers.{l}.attn.wv"), vec![d, d]),
                wo: push(format!("layers.{l}.attn.wo"), vec![d, d]),
                ln2_g: push(format!("layers.{l}.ln2.gain"), vec![d]),
                ln2_b: push(format!("layers.{l}.ln2.bias"), vec![d]),
                w1: push(format!("layers.{l}.mlp.w1"), vec![d, f]),
                b1: push(format!("layers.{l}.mlp.b1"), vec![f]),
                w2: push(format!("layers.{l}.mlp.w2"), vec![f, d]),
                b2: push(format!("layers.{l}.mlp.b2"), vec![d]),
            })
            .collect();
        let lnf_g = push("final_norm.gain".into(), vec![d]);
        let lnf_b = push("final_norm.bias".into(), vec![d]);
        let w_out = push("w_out".into(), vec![d, c.vocab_size]);
        Self {
            tensors,
            total,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            w_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn from_data(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total {
            return Err(Error::InvalidConfig(format!(
                "{} parameter values, config implies {}",
                data.len(),
                layout.total
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(Self { config, layout, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.range()])
    }
}

/// Seeded initialization: normal(0, init_std) weights, unit norm gains,
/// zero biases.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).expect("validated std");
    let mut data = vec![0.0; layout.total];
    for t in &layout.tensors {
        let fill_one = t.name.ends_with(".gain");
        let zero = t.name.ends_with(".bias") || t.name.ends_with(".b1") || t.name.ends_with(".b2");
        for v in &mut data[t.range()] {
            *v = if fill_one {
                1.0
            } else if zero {
                0.0
            } else {
                normal.sample(&mut rng)
            };
        }
    }
    Ok(ModelParams {
        config: config.clone(),
        layout,
        data,
    })
}
