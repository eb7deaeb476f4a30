use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{sgd_step, Gradients, MicroModelParameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Stateful parameter updater. Adam uses `beta1 = 0.9`, `beta2 = 0.999`,
/// `eps = 1e-8` with bias correction. Weight decay is decoupled
/// (`θ ← θ − lr·wd·θ`) and skipped on steps whose gradient is exactly zero.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    max_grad_norm: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    /// `max_grad_norm = 0` disables norm clipping.
    pub fn new(kind: OptimizerKind, lr: f64, max_grad_norm: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        if !(max_grad_norm >= 0.0) {
            return Err(Error::InvalidConfig("max_grad_norm must be >= 0".into()));
        }
        Ok(Optimizer {
            kind,
            lr,
            max_grad_norm,
            weight_decay: 0.0,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Result<Self> {
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("weight_decay must be >= 0, got {weight_decay}")));
        }
        self.weight_decay = weight_decay;
        Ok(self)
    }

    pub fn step(&mut self, params: &MicroModelParameters, grads: &Gradients) -> Result<MicroModelParameters> {
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                actual: grads.len(),
            });
        }
        let mut g = grads.clone();
        let norm = g.l2_norm();
        if !norm.is_finite() {
            return Err(Error::NonFiniteInput("gradient"));
        }
        if self.max_grad_norm > 0.0 && norm > self.max_grad_norm {
            g.scale(self.max_grad_norm / norm);
        }
        let decayed;
        let params = if self.weight_decay > 0.0 && norm > 0.0 {
            let keep = 1.0 - self.lr * self.weight_decay;
            let data = params.as_slice().iter().map(|p| p * keep).collect();
            decayed = MicroModelParameters::from_vec(*params.config(), data)?;
            &decayed
        } else {
            params
        };
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, &g, self.lr),
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                if self.m.is_empty() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                }
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                let mut data = params.as_slice().to_vec();
                for (i, (p, gi)) in data.iter_mut().zip(&g.0).enumerate() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * gi;
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * gi * gi;
                    // zero gradients with zero history leave the entry untouched
                    if self.m[i] != 0.0 {
                        *p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
                    }
                }
                MicroModelParameters::from_vec(*params.config(), data)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn params() -> MicroModelParameters {
        let cfg = ModelConfig {
            vocab_size: 4,
            image_vocab_size: 2,
            d_model: 4,
            n_layers: 1,
            n_heads: 1,
            max_seq_len: 4,
            seed: 0,
        };
        init_params(&cfg, 1).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let p = params();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.1, 1.0).unwrap();
            let next = opt.step(&p, &Gradients::zeros(p.len())).unwrap();
            assert_eq!(next, p);
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let p = params();
        let mut g = Gradients::zeros(p.len());
        g.0[0] = 0.003;
        g.0[1] = -0.2;
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, 0.0).unwrap();
        let next = opt.step(&p, &g).unwrap();
        assert!((p.as_slice()[0] - next.as_slice()[0] - 0.01).abs() < 1e-6);
        assert!((next.as_slice()[1] - p.as_slice()[1] - 0.01).abs() < 1e-6);
        assert_eq!(next.as_slice()[2], p.as_slice()[2]);
    }

    #[test]
    fn norm_clipping_caps_sgd_step() {
        let p = params();
        let mut g = Gradients::zeros(p.len());
        g.0[0] = 30.0;
        g.0[1] = 40.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1.0, 5.0).unwrap();
        let next = opt.step(&p, &g).unwrap();
        assert!((p.as_slice()[0] - next.as_slice()[0] - 3.0).abs() < 1e-12);
        assert!((p.as_slice()[1] - next.as_slice()[1] - 4.0).abs() < 1e-12);
    }
}
