//! Group-relative policy optimization.
//!
//! Per group of `G` responses to one prompt:
//!
//! ```text
//! A_i = (r_i - mean r) / std r                     (population std)
//! J   = 1/G sum_i 1/|o_i| sum_t [ min(rho A_i, clip(rho, 1-eps, 1+eps) A_i) - beta KL_t ]
//! rho = exp(log pi_theta(o_t) - log pi_old(o_t))
//! ```
//!
//! `KL_t` is the exact categorical `KL(pi_theta || pi_ref)` of the next-symbol
//! distribution at step `t`. The loss is `-J`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{backward, forward, log_softmax, Gradients, MicroModelParameters, Upstream};
use crate::segment::TokenSegmentation;

use super::reward::{RewardBreakdown, RewardWeights};

/// Groups whose reward spread falls below this get zero advantages.
pub const STD_GUARD: f64 = 1e-8;
/// Largest tolerated `|log pi_theta - log pi_old|` for one token.
pub const MAX_LOG_RATIO: f64 = 30.0;

pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= STD_GUARD) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `min(rho A, clip(rho) A)` for one token.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

/// `d clipped_surrogate / d log rho`: `rho A` while the unclipped branch is the
/// minimum, zero once clipping takes over.
fn surrogate_slope(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        unclipped
    } else {
        0.0
    }
}

/// Which attention rows feed the visual reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardRows {
    /// The rows that produced each response symbol (`P-1 .. P+n-2`).
    #[default]
    Generation,
    /// The response symbols' own rows (`P .. P+n-1`), as under teacher forcing.
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RLConfig {
    pub group_size: usize,
    /// Half-width of the ratio clip.
    pub clip_range: f64,
    /// Weight of the KL-to-reference penalty.
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Prompts (groups) per optimizer step.
    pub groups_per_step: usize,
    /// Optimizer steps taken on each rollout batch.
    pub epochs_per_batch: usize,
    /// Gradient L2 norm cap; `0` disables clipping.
    pub max_grad_norm: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub reward: RewardWeights,
    pub reward_rows: RewardRows,
    /// Held-out episodes scored after every step.
    pub eval_episodes: usize,
}

impl Default for RLConfig {
    fn default() -> Self {
        RLConfig {
            group_size: 8,
            clip_range: 0.2,
            kl_coeff: 0.01,
            learning_rate: 1e-3,
            steps: 200,
            seed: 0,
            groups_per_step: 4,
            epochs_per_batch: 1,
            max_grad_norm: 1.0,
            weight_decay: 0.0,
            reward: RewardWeights::default(),
            reward_rows: RewardRows::Generation,
            eval_episodes: 0,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall(self.group_size));
        }
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return Err(Error::InvalidConfig(format!("clip_range must lie in (0, 1), got {}", self.clip_range)));
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return Err(Error::InvalidConfig(format!("kl_coeff must be >= 0, got {}", self.kl_coeff)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.groups_per_step == 0 || self.epochs_per_batch == 0 {
            return Err(Error::InvalidConfig("groups_per_step and epochs_per_batch must be >= 1".into()));
        }
        if !(self.max_grad_norm >= 0.0) {
            return Err(Error::InvalidConfig("max_grad_norm must be >= 0".into()));
        }
        self.reward.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Prompt followed by the response.
    pub sequence: Vec<usize>,
    /// Segmentation of `sequence`; its response span covers the response.
    pub segmentation: TokenSegmentation,
    pub response: Vec<usize>,
    /// `log pi_old(o_t)`, frozen at sampling time.
    pub logp_old: Vec<f64>,
    /// `log pi_ref(. | o_<t)` over the text vocabulary, one row per response symbol.
    pub ref_logprobs: Vec<Vec<f64>>,
    pub reward: RewardBreakdown,
    /// Model-level visual/system attention ratio on the reward rows.
    pub vas: f64,
}

impl Trajectory {
    pub fn prompt_len(&self) -> usize {
        self.segmentation.response.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward.total).collect();
        let advantages = group_advantages(&rewards)?;
        Ok(RolloutGroup {
            trajectories,
            advantages,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GrpoStats {
    /// `-J`.
    pub loss: f64,
    /// Group-weighted mean of the surrogate term.
    pub surrogate: f64,
    /// Group-weighted mean per-token KL to the reference.
    pub kl: f64,
    /// Fraction of tokens whose ratio sits outside the clip range.
    pub clip_fraction: f64,
}

/// Per-trajectory contribution: stats scaled by `1/(G |o|)`, plus `dJ/dlogits`.
struct TrajectoryTerm {
    surrogate: f64,
    kl: f64,
    clipped: f64,
    dlogits: Vec<f64>,
    trace: Option<crate::model::ForwardTrace>,
}

fn trajectory_term(
    params: &MicroModelParameters,
    traj: &Trajectory,
    advantage: f64,
    index: usize,
    weight: f64,
    cfg: &RLConfig,
    want_grad: bool,
) -> Result<TrajectoryTerm> {
    let n = traj.response.len();
    if traj.logp_old.len() != n || traj.ref_logprobs.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: traj.logp_old.len().min(traj.ref_logprobs.len()),
        });
    }
    let trace = forward(params, &traj.sequence, &traj.segmentation)?;
    let vocab = trace.vocab_size();
    let p0 = traj.prompt_len();
    let w = weight / n as f64;
    let mut dlogits = if want_grad { vec![0.0; trace.logits.len()] } else { Vec::new() };
    let (mut surrogate, mut kl_sum, mut clipped) = (0.0, 0.0, 0.0);
    for t in 0..n {
        let row = p0 + t - 1;
        let lp = log_softmax(trace.logits_row(row));
        let lq = &traj.ref_logprobs[t];
        if lq.len() != vocab {
            return Err(Error::LengthMismatch {
                expected: vocab,
                actual: lq.len(),
            });
        }
        let log_ratio = lp[traj.response[t]] - traj.logp_old[t];
        if !(log_ratio.abs() <= MAX_LOG_RATIO) {
            return Err(Error::NonFiniteRatio {
                trajectory: index,
                token: t,
                log_ratio,
            });
        }
        let ratio = log_ratio.exp();
        let kl: f64 = lp.iter().zip(lq).map(|(a, b)| a.exp() * (a - b)).sum();
        surrogate += w * clipped_surrogate(ratio, advantage, cfg.clip_range);
        kl_sum += w * kl;
        if (ratio - 1.0).abs() > cfg.clip_range {
            clipped += 1.0;
        }
        if want_grad {
            // dloss/dz = -w [ s (onehot - p) - beta p (lp - lq - KL) ]
            let s = surrogate_slope(ratio, advantage, cfg.clip_range);
            let g = &mut dlogits[row * vocab..(row + 1) * vocab];
            for j in 0..vocab {
                let p = lp[j].exp();
                let onehot = if j == traj.response[t] { 1.0 } else { 0.0 };
                g[j] = -w * (s * (onehot - p) - cfg.kl_coeff * p * (lp[j] - lq[j] - kl));
            }
        }
    }
    Ok(TrajectoryTerm {
        surrogate,
        kl: kl_sum,
        clipped,
        dlogits,
        trace: want_grad.then_some(trace),
    })
}

fn flatten(groups: &[RolloutGroup]) -> Vec<(usize, usize, f64)> {
    let mut items = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let w = 1.0 / (groups.len() * g.trajectories.len()) as f64;
        for ti in 0..g.trajectories.len() {
            items.push((gi, ti, w));
        }
    }
    items
}

fn run(
    params: &MicroModelParameters,
    groups: &[RolloutGroup],
    cfg: &RLConfig,
    exec: Exec,
    want_grad: bool,
) -> Result<(GrpoStats, Option<Gradients>)> {
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    for g in groups {
        if g.trajectories.len() < 2 {
            return Err(Error::GroupTooSmall(g.trajectories.len()));
        }
        if g.advantages.len() != g.trajectories.len() {
            return Err(Error::LengthMismatch {
                expected: g.trajectories.len(),
                actual: g.advantages.len(),
            });
        }
    }
    let items = flatten(groups);
    let results = exec.try_map(items.len(), |i| {
        let (gi, ti, w) = items[i];
        let g = &groups[gi];
        let term = trajectory_term(params, &g.trajectories[ti], g.advantages[ti], ti, w, cfg, want_grad)?;
        let grad = match &term.trace {
            Some(trace) => Some(backward(
                params,
                trace,
                Upstream {
                    logits: Some(&term.dlogits),
                    attention: None,
                },
            )?),
            None => None,
        };
        Ok::<_, Error>((term.surrogate, term.kl, term.clipped, g.trajectories[ti].response.len(), grad))
    })?;

    let mut stats = GrpoStats::default();
    let mut tokens = 0usize;
    let mut grads = want_grad.then(|| Gradients::zeros(params.len()));
    for (surrogate, kl, clipped, n, grad) in results {
        stats.surrogate += surrogate;
        stats.kl += kl;
        stats.clip_fraction += clipped;
        tokens += n;
        if let (Some(acc), Some(g)) = (grads.as_mut(), grad) {
            acc.add_scaled(&g, 1.0);
        }
    }
    stats.clip_fraction /= tokens.max(1) as f64;
    stats.loss = -(stats.surrogate - cfg.kl_coeff * stats.kl);
    Ok((stats, grads))
}

/// The loss `-J` over one or more groups, each group weighted equally.
pub fn grpo_loss(params: &MicroModelParameters, groups: &[RolloutGroup], cfg: &RLConfig, exec: Exec) -> Result<GrpoStats> {
    Ok(run(params, groups, cfg, exec, false)?.0)
}

/// The loss and its exact gradient with respect to `params`.
pub fn grpo_loss_grad(
    params: &MicroModelParameters,
    groups: &[RolloutGroup],
    cfg: &RLConfig,
    exec: Exec,
) -> Result<(GrpoStats, Gradients)> {
    let (stats, grads) = run(params, groups, cfg, exec, true)?;
    Ok((stats, grads.expect("gradient requested")))
}
