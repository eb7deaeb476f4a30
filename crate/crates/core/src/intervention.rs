//! Training-free attention reallocation.
//!
//! Post-softmax, every selected row has its system-key entries multiplied by
//! `gamma` and is renormalized. With proportional redistribution the
//! visual/system mass ratio of a row is multiplied by exactly `1/gamma`.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionTensor;
use crate::error::{Error, Result};
use crate::segment::TokenSegmentation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redistribution {
    /// Renormalize the whole row: freed mass spreads over all non-system keys.
    #[default]
    Proportional,
    /// Hand the freed mass to image keys only, in proportion to their weight.
    /// Rows with no image mass fall back to proportional.
    ImageOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionConfig {
    pub gamma: f64,
    /// `None` selects every layer.
    pub layers: Option<Vec<usize>>,
    pub redistribution: Redistribution,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        InterventionConfig {
            gamma: 1.0,
            layers: None,
            redistribution: Redistribution::Proportional,
        }
    }
}

impl InterventionConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        InterventionConfig {
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        if let Some(sel) = &self.layers {
            if let Some(&l) = sel.iter().find(|&&l| l >= layers) {
                return Err(Error::LayerOutOfRange { layer: l, layers });
            }
        }
        Ok(())
    }

    pub fn applies_to(&self, layer: usize) -> bool {
        self.layers.as_ref().is_none_or(|sel| sel.contains(&layer))
    }

    pub fn is_identity(&self) -> bool {
        self.gamma == 1.0
    }
}

pub fn reallocate(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    cfg: &InterventionConfig,
) -> Result<AttentionTensor> {
    if seg.system.is_empty() {
        return Err(Error::EmptySystemSpan);
    }
    cfg.validate(attn.layers())?;
    let mut out = attn.clone();
    if cfg.is_identity() {
        return Ok(out);
    }
    let plan = RowPlan::new(seg, cfg);
    for l in (0..attn.layers()).filter(|&l| cfg.applies_to(l)) {
        for h in 0..attn.heads() {
            for q in 0..attn.seq_len() {
                plan.apply(out.row_mut(l, h, q));
            }
        }
    }
    Ok(out)
}

/// Precomputed key sets for reallocating single rows, shared with the model's
/// intervened forward pass.
#[derive(Debug, Clone)]
pub(crate) struct RowPlan {
    gamma: f64,
    system: std::ops::Range<usize>,
    image: Vec<usize>,
    mode: Redistribution,
}

impl RowPlan {
    pub(crate) fn new(seg: &TokenSegmentation, cfg: &InterventionConfig) -> Self {
        RowPlan {
            gamma: cfg.gamma,
            system: seg.system.iter(),
            image: seg.image_indices(),
            mode: cfg.redistribution,
        }
    }

    /// Rows whose total after suppression is zero are left as they were.
    pub(crate) fn apply(&self, row: &mut [f64]) {
        let system = self.system.start.min(row.len())..self.system.end.min(row.len());
        let sys_mass: f64 = row[system.clone()].iter().sum();
        if sys_mass == 0.0 {
            return;
        }
        let image_mass: f64 = self.image.iter().filter(|&&k| k < row.len()).map(|&k| row[k]).sum();
        match self.mode {
            Redistribution::ImageOnly if image_mass > 0.0 => {
                let freed = (1.0 - self.gamma) * sys_mass;
                let scale = (image_mass + freed) / image_mass;
                row[system].iter_mut().for_each(|w| *w *= self.gamma);
                let n = row.len();
                for &k in self.image.iter().filter(|&&k| k < n) {
                    row[k] *= scale;
                }
            }
            _ => {
                let total: f64 = row.iter().sum::<f64>() - (1.0 - self.gamma) * sys_mass;
                if total <= 0.0 {
                    return;
                }
                row[system].iter_mut().for_each(|w| *w *= self.gamma);
                row.iter_mut().for_each(|w| *w /= total);
            }
        }
    }
}
