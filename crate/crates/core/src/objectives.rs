//! Attention-guided training objectives.
//!
//! ```text
//! L_total    = L_LM + alpha * L_enhance + beta * L_suppress
//! L_enhance  = -1/|L| sum_l 1/H sum_h log( 1/(|Q||K_img|) sum_q sum_{k in K_img} A[l,h,q,k] )
//! L_suppress = +1/|L| sum_l 1/H sum_h log( 1/(|Q||K_sys|) sum_q sum_{k in K_sys} A[l,h,q,k] + eps )
//! ```
//!
//! The enhancement term has no `eps` inside its log; when a head puts exactly
//! zero mass on the image keys its inner mean is replaced by `eps` (with zero
//! gradient) so the loss stays finite.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionTensor;
use crate::error::{Error, Result};
use crate::segment::TokenSegmentation;
use crate::vas::QueryKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.15,
            beta: 0.15,
            epsilon: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn off() -> Self {
        LossWeights {
            alpha: 0.0,
            beta: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights need alpha, beta >= 0 and epsilon > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn uses_attention(&self) -> bool {
        self.alpha != 0.0 || self.beta != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lm: f64,
    pub enhance_img: f64,
    pub suppress_sys: f64,
    pub total: f64,
}

pub fn total_loss(lm: f64, enhance: f64, suppress: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    for (v, name) in [(lm, "lm"), (enhance, "enhance_img"), (suppress, "suppress_sys")] {
        if !v.is_finite() {
            return Err(Error::NonFiniteInput(name));
        }
    }
    Ok(LossBreakdown {
        lm,
        enhance_img: enhance,
        suppress_sys: suppress,
        total: lm + weights.alpha * enhance + weights.beta * suppress,
    })
}

/// Configured query set and layer subset for the attention losses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionScope {
    /// Response rows by default; `user` targets the prompt question instead.
    pub queries: QueryKind,
    /// `None` selects every layer.
    pub layers: Option<Vec<usize>>,
}

impl Default for AttentionScope {
    fn default() -> Self {
        AttentionScope {
            queries: QueryKind::Response,
            layers: None,
        }
    }
}

impl AttentionScope {
    pub fn target(&self, attn: &AttentionTensor, seg: &TokenSegmentation) -> AttentionTarget {
        AttentionTarget {
            layers: self.layers.clone().unwrap_or_else(|| (0..attn.layers()).collect()),
            queries: self.queries.indices(seg),
        }
    }
}

/// Where the attention losses look: which layers, and which query rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionTarget {
    pub layers: Vec<usize>,
    pub queries: Vec<usize>,
}

impl AttentionTarget {
    pub fn all_layers(attn: &AttentionTensor, queries: Vec<usize>) -> Self {
        AttentionTarget {
            layers: (0..attn.layers()).collect(),
            queries,
        }
    }

    fn check(&self, attn: &AttentionTensor) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("no target layers".into()));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= attn.layers()) {
            return Err(Error::LayerOutOfRange {
                layer: l,
                layers: attn.layers(),
            });
        }
        if self.queries.is_empty() {
            return Err(Error::EmptyQuerySet);
        }
        if let Some(&q) = self.queries.iter().find(|&&q| q >= attn.seq_len()) {
            return Err(Error::Shape(format!(
                "query {q} outside sequence of length {}",
                attn.seq_len()
            )));
        }
        Ok(())
    }
}

/// Inner mean `1/(|Q||K|) sum_q sum_k A[l,h,q,k]` for one head.
fn block_mean(attn: &AttentionTensor, l: usize, h: usize, queries: &[usize], keys: &[usize]) -> f64 {
    let mut s = 0.0;
    for &q in queries {
        let row = attn.row(l, h, q);
        for &k in keys {
            s += row[k];
        }
    }
    s / (queries.len() * keys.len()) as f64
}

pub fn enhance_img_loss(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    target: &AttentionTarget,
    epsilon: f64,
) -> Result<f64> {
    let keys = seg.image_indices();
    if keys.is_empty() {
        return Err(Error::EmptyImageSpan);
    }
    target.check(attn)?;
    Ok(-head_log_average(attn, target, &keys, |m| {
        if m > 0.0 {
            m.ln()
        } else {
            epsilon.ln()
        }
    }))
}

pub fn suppress_sys_loss(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    target: &AttentionTarget,
    epsilon: f64,
) -> Result<f64> {
    let keys = seg.system_indices();
    if keys.is_empty() {
        return Err(Error::EmptySystemSpan);
    }
    target.check(attn)?;
    Ok(head_log_average(attn, target, &keys, |m| (m + epsilon).ln()))
}

fn head_log_average(
    attn: &AttentionTensor,
    target: &AttentionTarget,
    keys: &[usize],
    log: impl Fn(f64) -> f64,
) -> f64 {
    let mut total = 0.0;
    for &l in &target.layers {
        let mut layer = 0.0;
        for h in 0..attn.heads() {
            layer += log(block_mean(attn, l, h, &target.queries, keys));
        }
        total += layer / attn.heads() as f64;
    }
    total / target.layers.len() as f64
}

/// Both attention losses at once.
pub fn attention_losses(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    target: &AttentionTarget,
    epsilon: f64,
) -> Result<(f64, f64)> {
    Ok((
        enhance_img_loss(attn, seg, target, epsilon)?,
        suppress_sys_loss(attn, seg, target, epsilon)?,
    ))
}

/// `d(alpha * L_enhance + beta * L_suppress) / dA`, laid out like `attn`.
///
/// Entries outside the target layers, the query rows, or the image/system
/// key columns are zero.
pub fn attention_loss_upstream(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    target: &AttentionTarget,
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; attn.weights().len()];
    if !weights.uses_attention() {
        return Ok(grad);
    }
    target.check(attn)?;
    let image = seg.image_indices();
    let system = seg.system_indices();
    if weights.alpha != 0.0 && image.is_empty() {
        return Err(Error::EmptyImageSpan);
    }
    if weights.beta != 0.0 && system.is_empty() {
        return Err(Error::EmptySystemSpan);
    }
    let per_head = 1.0 / (target.layers.len() * attn.heads()) as f64;
    let nq = target.queries.len() as f64;

    for &l in &target.layers {
        for h in 0..attn.heads() {
            if weights.alpha != 0.0 {
                let m = block_mean(attn, l, h, &target.queries, &image);
                // clamped heads are constant in A
                if m > 0.0 {
                    let g = -weights.alpha * per_head / (m * nq * image.len() as f64);
                    scatter(&mut grad, attn, l, h, &target.queries, &image, g);
                }
            }
            if weights.beta != 0.0 {
                let m = block_mean(attn, l, h, &target.queries, &system);
                let g = weights.beta * per_head / ((m + weights.epsilon) * nq * system.len() as f64);
                scatter(&mut grad, attn, l, h, &target.queries, &system, g);
            }
        }
    }
    Ok(grad)
}

fn scatter(
    grad: &mut [f64],
    attn: &AttentionTensor,
    l: usize,
    h: usize,
    queries: &[usize],
    keys: &[usize],
    g: f64,
) {
    for &q in queries {
        for &k in keys {
            grad[attn.index(l, h, q, k)] += g;
        }
    }
}

/// Mean attention mass on image keys over target layers, heads and queries.
pub fn mean_image_mass(attn: &AttentionTensor, seg: &TokenSegmentation, target: &AttentionTarget) -> f64 {
    let image = seg.image_indices();
    let mut total = 0.0;
    for &l in &target.layers {
        for h in 0..attn.heads() {
            total += block_mean(attn, l, h, &target.queries, &image) * image.len() as f64;
        }
    }
    total / (target.layers.len() * attn.heads()) as f64
}
