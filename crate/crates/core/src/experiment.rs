//! Three-way comparison on grounded lookup: LM-only cold start, cold start
//! with attention objectives, and the latter followed by GRPO.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Exec;
use crate::model::{init_params, MicroModelParameters, ModelConfig};
use crate::objectives::LossWeights;
use crate::rl::{train_rl, GroundedLookup, LookupConfig, RLConfig};
use crate::train::{evaluate, train_cold_start, Evaluation, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub env: LookupConfig,
    /// Cold-start settings; `weights` applies to the objectives variant only.
    pub train: TrainConfig,
    pub rl: RLConfig,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            env: LookupConfig::default(),
            train: TrainConfig::default(),
            rl: RLConfig::default(),
            seeds: vec![0, 1, 2],
            eval_episodes: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    LmOnly,
    Objectives,
    ObjectivesRl,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::LmOnly, Variant::Objectives, Variant::ObjectivesRl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LmOnly => "lm_only",
            Variant::Objectives => "objectives",
            Variant::ObjectivesRl => "objectives_rl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub seed: u64,
    /// Teacher-forced model-level VAS on held-out reference answers.
    pub vas: f64,
    pub accuracy: f64,
    pub image_mass: f64,
    pub vas_generated: f64,
}

impl VariantRow {
    fn new(variant: Variant, seed: u64, e: Evaluation) -> Self {
        VariantRow {
            variant,
            seed,
            vas: e.vas_reference,
            accuracy: e.accuracy,
            image_mass: e.image_mass,
            vas_generated: e.vas_generated,
        }
    }
}

/// Seed of the held-out evaluation stream for run seed `seed`.
pub fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x5eed_0000_0000)
}

/// Initial parameters for run seed `seed`.
pub fn initial_params(env: &GroundedLookup, model: &ModelConfig, seed: u64) -> Result<MicroModelParameters> {
    init_params(&env.model_config(model), seed)
}

/// Rows are ordered by seed, then variant.
pub fn experiment_compare(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<VariantRow>> {
    let env = GroundedLookup::new(cfg.env)?;
    let mut rows = Vec::with_capacity(3 * cfg.seeds.len());
    for &seed in &cfg.seeds {
        let init = initial_params(&env, &cfg.model, seed)?;
        let held_out = env.episodes(eval_seed(seed), cfg.eval_episodes.max(1));
        let lm_cfg = TrainConfig {
            seed,
            weights: LossWeights::off(),
            ..cfg.train.clone()
        };
        let obj_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let lm = train_cold_start(&init, &env, &lm_cfg, exec)?.params;
        let obj = train_cold_start(&init, &env, &obj_cfg, exec)?.params;
        let rl_cfg = RLConfig {
            seed,
            ..cfg.rl.clone()
        };
        let rl = train_rl(&obj, &env, &rl_cfg, exec)?.params;
        for (variant, params) in Variant::ALL.into_iter().zip([&lm, &obj, &rl]) {
            rows.push(VariantRow::new(variant, seed, evaluate(params, &env, &held_out, exec)?));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_budget_gives_identical_rows() {
        let cfg = ExperimentConfig {
            model: ModelConfig {
                d_model: 8,
                ..Default::default()
            },
            train: TrainConfig {
                steps: 0,
                ..Default::default()
            },
            rl: RLConfig {
                steps: 0,
                ..Default::default()
            },
            seeds: vec![4],
            eval_episodes: 10,
            ..Default::default()
        };
        let rows = experiment_compare(&cfg, Exec::Parallel).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.vas == rows[0].vas && r.accuracy == rows[0].accuracy));
    }
}
