//! Visual-anchored reward shaping.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionTensor;
use crate::error::{Error, Result};
use crate::segment::TokenSegmentation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub lambda_v: f64,
    pub lambda_f: f64,
    /// Added to the system mass in the visual-reward denominator.
    pub epsilon: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda_v: 0.3,
            lambda_f: 0.1,
            epsilon: 1e-6,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_v", self.lambda_v),
            ("lambda_f", self.lambda_f),
            ("epsilon", self.epsilon),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub visual: f64,
    pub format: f64,
    pub total: f64,
}

/// `accuracy + lambda_v * visual + lambda_f * format`; `visual` is zeroed when
/// `accuracy` is zero.
pub fn total_reward(accuracy: bool, visual: f64, format: bool, weights: &RewardWeights) -> RewardBreakdown {
    let accuracy = f64::from(u8::from(accuracy));
    let format = f64::from(u8::from(format));
    let visual = if accuracy == 0.0 { 0.0 } else { visual };
    RewardBreakdown {
        accuracy,
        visual,
        format,
        total: accuracy + weights.lambda_v * visual + weights.lambda_f * format,
    }
}

/// Visual reward over the response-span query rows.
pub fn visual_reward(attn: &AttentionTensor, seg: &TokenSegmentation, correct: bool, epsilon: f64) -> Result<f64> {
    if !correct {
        return Ok(0.0);
    }
    visual_reward_at(attn, seg, &seg.response_indices(), epsilon)
}

/// Mean over `queries` of the layer-mean of `image mass / (system mass + epsilon)`,
/// where each layer's row is first averaged over heads.
pub fn visual_reward_at(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    queries: &[usize],
    epsilon: f64,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyResponseSpan);
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= attn.seq_len()) {
        return Err(Error::Shape(format!("query {q} outside sequence of {}", attn.seq_len())));
    }
    let image = seg.image_indices();
    let system = seg.system_indices();
    let heads = attn.heads() as f64;
    let mut total = 0.0;
    for &t in queries {
        let mut per_layer = 0.0;
        for l in 0..attn.layers() {
            let mut img = 0.0;
            let mut sys = 0.0;
            for h in 0..attn.heads() {
                let row = attn.row(l, h, t);
                img += image.iter().map(|&k| row[k]).sum::<f64>();
                sys += system.iter().map(|&k| row[k]).sum::<f64>();
            }
            per_layer += (img / heads) / (sys / heads + epsilon);
        }
        total += per_layer / attn.layers() as f64;
    }
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::Span;

    #[test]
    fn fixtures() {
        let w = RewardWeights::default();
        let r = total_reward(true, 2.0, true, &w);
        assert!((r.total - 1.7).abs() < 1e-12);
        let r = total_reward(false, 5.0, true, &w);
        assert_eq!((r.visual, r.total), (0.0, 0.1));
        assert_eq!(total_reward(true, 0.0, false, &w).total, 1.0);
    }

    #[test]
    fn uniform_rows_give_image_to_system_ratio() {
        let seg = TokenSegmentation::new(
            10,
            Span::new(0, 2),
            vec![Span::new(2, 6)],
            vec![Span::new(6, 7)],
            Span::new(7, 10),
        );
        let a = AttentionTensor::uniform(2, 3, 10, false);
        let v = visual_reward(&a, &seg, true, 1e-6).unwrap();
        let expected = 0.4 / (0.2 + 1e-6);
        assert!((v - expected).abs() < 1e-12);
        assert_eq!(visual_reward(&a, &seg, false, 1e-6).unwrap(), 0.0);

        let mut empty = seg.clone();
        empty.response = Span::new(10, 10);
        assert!(matches!(visual_reward(&a, &empty, true, 1e-6), Err(Error::EmptyResponseSpan)));
        assert_eq!(visual_reward(&a, &empty, false, 1e-6).unwrap(), 0.0);
    }
}
