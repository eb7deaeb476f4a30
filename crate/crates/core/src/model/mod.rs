//! A tiny causal transformer whose every attention row is observable and
//! differentiable.
//!
//! Architecture per layer (no norms, no dropout, no biases):
//!
//! ```text
//! x   <- x + concat_h( softmax(causal(Q_h K_hᵀ / sqrt(d_head))) V_h ) W_o
//! x   <- x + tanh(x W_1) W_2          (hidden width 2·d_model)
//! ```
//!
//! Inputs are the sum of a symbol embedding (text table, or image table for
//! positions inside an image span) and a learned position embedding. The
//! output head maps the final residual stream to text-vocabulary logits.
//!
//! Parameters live in one flat `f64` vector in this fixed order, each matrix
//! row-major:
//!
//! 1. text embedding `[vocab_size × d_model]`
//! 2. image embedding `[image_vocab_size × d_model]`
//! 3. position embedding `[max_seq_len × d_model]`
//! 4. per layer: `W_q, W_k, W_v, W_o` `[d × d]`, `W_1` `[d × 2d]`, `W_2` `[2d × d]`
//! 5. output head `[d_model × vocab_size]`
//!
//! Initialization draws every entry uniformly from `[-1/sqrt(d), 1/sqrt(d))`
//! with [`SeededRng`] in this same order.

mod backward;
mod checkpoint;
mod forward;
pub(crate) mod generate;
mod gradcheck;
mod optim;
pub(crate) mod linalg;

use serde::{Deserialize, Serialize};

pub use backward::{backward, Upstream};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use forward::{forward, forward_with, lm_loss, lm_loss_grad, log_softmax, ForwardTrace};
pub use generate::{generate_with_intervention, greedy_decode, Generation};
pub use gradcheck::{finite_diff, finite_diff_grad, max_relative_error, relative_error, RELATIVE_ERROR_FLOOR};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub image_vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 32,
            image_vocab_size: 16,
            d_model: 24,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 24,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("image_vocab_size", self.image_vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub tok: usize,
    pub img: usize,
    pub pos: usize,
    layers_start: usize,
    layer_stride: usize,
    d: usize,
    pub out: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub w1: usize,
    pub w2: usize,
}

impl Layout {
    pub(crate) fn new(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let tok = 0;
        let img = tok + c.vocab_size * d;
        let pos = img + c.image_vocab_size * d;
        let layers_start = pos + c.max_seq_len * d;
        let layer_stride = 4 * d * d + 2 * d * 2 * d;
        let out = layers_start + c.n_layers * layer_stride;
        let total = out + d * c.vocab_size;
        Layout {
            tok,
            img,
            pos,
            layers_start,
            layer_stride,
            d,
            out,
            total,
        }
    }

    pub(crate) fn layer(&self, l: usize) -> LayerOffsets {
        let d = self.d;
        let base = self.layers_start + l * self.layer_stride;
        LayerOffsets {
            wq: base,
            wk: base + d * d,
            wv: base + 2 * d * d,
            wo: base + 3 * d * d,
            w1: base + 4 * d * d,
            w2: base + 4 * d * d + 2 * d * d,
        }
    }
}

/// All trainable weights, flat in the documented order.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroModelParameters {
    config: ModelConfig,
    data: Vec<f64>,
}

pub type Params = MicroModelParameters;

/// Gradient with the same layout as [`MicroModelParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Gradients(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl MicroModelParameters {
    pub fn from_vec(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_count();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("parameters"));
        }
        Ok(MicroModelParameters { config, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.data[offset..offset + len]
    }

    /// FNV-1a over the raw bits; traces remember it to detect stale parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

pub fn init_params(config: &ModelConfig, seed: u64) -> Result<MicroModelParameters> {
    config.validate()?;
    let bound = 1.0 / (config.d_model as f64).sqrt();
    let mut rng = SeededRng::new(seed);
    let data = (0..config.param_count()).map(|_| rng.symmetric(bound)).collect();
    Ok(MicroModelParameters {
        config: *config,
        data,
    })
}

/// `θ ← θ − lr·g`.
pub fn sgd_step(params: &MicroModelParameters, grads: &Gradients, lr: f64) -> Result<MicroModelParameters> {
    if !(lr > 0.0) {
        return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    let data = params
        .data
        .iter()
        .zip(&grads.0)
        .map(|(p, g)| p - lr * g)
        .collect();
    Ok(MicroModelParameters {
        config: params.config,
        data,
    })
}
