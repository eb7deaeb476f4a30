use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{forward, log_softmax, MicroModelParameters, Optimizer, OptimizerKind};
use crate::model::generate::decode;
use crate::rng::SeededRng;
use crate::train::{evaluate, generation_rows, Evaluation};
use crate::vas::{mean, vas_per_head};

use super::env::{Episode, GroundedLookup};
use super::grpo::{grpo_loss_grad, RLConfig, RewardRows, RolloutGroup, Trajectory};
use super::reward::{total_reward, visual_reward_at};

fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

/// Samples one response with temperature 1 and scores it.
pub fn sample_trajectory(
    params: &MicroModelParameters,
    reference: &MicroModelParameters,
    env: &GroundedLookup,
    episode: &Episode,
    cfg: &RLConfig,
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    let p = episode.prompt.len();
    let gen = decode(
        params,
        &episode.prompt,
        &episode.segmentation,
        None,
        env.config().max_new,
        Some(env.vocab().end()),
        |row| rng.categorical(&softmax(row)),
    )?;
    let seg = gen.segmentation;
    let trace = forward(params, &gen.sequence, &seg)?;
    let ref_trace = forward(reference, &gen.sequence, &seg)?;
    let n = gen.tokens.len();
    let mut logp_old = Vec::with_capacity(n);
    let mut ref_logprobs = Vec::with_capacity(n);
    for (t, &o) in gen.tokens.iter().enumerate() {
        logp_old.push(log_softmax(trace.logits_row(p + t - 1))[o]);
        ref_logprobs.push(log_softmax(ref_trace.logits_row(p + t - 1)));
    }
    let rows = match cfg.reward_rows {
        RewardRows::Generation => generation_rows(&seg),
        RewardRows::Response => seg.response_indices(),
    };
    let score = env.score(episode, &gen.tokens);
    // causal rows of the final pass equal the rows seen while generating
    let visual = if score.accuracy {
        visual_reward_at(&trace.attention, &seg, &rows, cfg.reward.epsilon)?
    } else {
        0.0
    };
    let vas = mean(&vas_per_head(&trace.attention, &seg, &rows, false)?.concat());
    Ok(Trajectory {
        sequence: gen.sequence,
        segmentation: seg,
        response: gen.tokens,
        logp_old,
        ref_logprobs,
        reward: total_reward(score.accuracy, visual, score.format, &cfg.reward),
        vas,
    })
}

/// `G` trajectories for one episode; trajectory `i` draws from
/// `SeededRng::derive(seed, i)`, so the group is fixed by `(params, seed)`.
pub fn rollout(
    params: &MicroModelParameters,
    reference: &MicroModelParameters,
    env: &GroundedLookup,
    episode: &Episode,
    cfg: &RLConfig,
    seed: u64,
    exec: Exec,
) -> Result<RolloutGroup> {
    if cfg.group_size < 2 {
        return Err(Error::GroupTooSmall(cfg.group_size));
    }
    let trajectories = exec.try_map(cfg.group_size, |i| {
        let mut rng = SeededRng::derive(seed, i as u64);
        sample_trajectory(params, reference, env, episode, cfg, &mut rng).map_err(|e| e.at_sample(i))
    })?;
    RolloutGroup::new(trajectories)
}

/// Sampled-policy statistics on fixed episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub accuracy: f64,
    pub visual_reward: f64,
    /// Mean trajectory VAS on the reward rows.
    pub vas: f64,
}

/// Draws `samples` responses per episode (temperature 1, stream
/// `derive(seed, episode * samples + k)`) and averages their scores.
pub fn policy_stats(
    params: &MicroModelParameters,
    env: &GroundedLookup,
    episodes: &[Episode],
    samples: usize,
    cfg: &RLConfig,
    seed: u64,
    exec: Exec,
) -> Result<PolicyStats> {
    let n = episodes.len() * samples;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let trajs = exec.try_map(n, |i| {
        let mut rng = SeededRng::derive(seed, i as u64);
        sample_trajectory(params, params, env, &episodes[i / samples], cfg, &mut rng).map_err(|e| e.at_sample(i))
    })?;
    let avg = |f: &dyn Fn(&Trajectory) -> f64| trajs.iter().map(f).sum::<f64>() / n as f64;
    Ok(PolicyStats {
        accuracy: avg(&|t| t.reward.accuracy),
        visual_reward: avg(&|t| t.reward.visual),
        vas: avg(&|t| t.vas),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_accuracy: f64,
    pub mean_visual_reward: f64,
    pub mean_vas: f64,
    pub kl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<Evaluation>,
}

#[derive(Debug, Clone)]
pub struct RlRun {
    pub params: MicroModelParameters,
    pub history: Vec<RlRecord>,
}

/// Seed of group `g` at step `step`.
fn group_seed(seed: u64, step: usize, g: usize, per_step: usize) -> u64 {
    SeededRng::derive(seed, (step * per_step + g) as u64).next_u64()
}

/// GRPO from `params`; the reference policy is `params` frozen at entry.
///
/// Each step samples `groups_per_step` fresh episodes, rolls out a group per
/// episode under the current policy (which becomes `pi_old`), then takes
/// `epochs_per_batch` Adam steps on the batch loss.
pub fn train_rl(
    params: &MicroModelParameters,
    env: &GroundedLookup,
    cfg: &RLConfig,
    exec: Exec,
) -> Result<RlRun> {
    cfg.validate()?;
    let reference = params.clone();
    let mut params = params.clone();
    let mut opt =
        Optimizer::new(OptimizerKind::Adam, cfg.learning_rate, cfg.max_grad_norm)?.with_weight_decay(cfg.weight_decay)?;
    let eval_set = env.episodes(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, cfg.eval_episodes);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut ep_rng = SeededRng::derive(cfg.seed, 1 << 32 | step as u64);
        let mut groups = Vec::with_capacity(cfg.groups_per_step);
        for g in 0..cfg.groups_per_step {
            let ep = env.episode(&mut ep_rng);
            let seed = group_seed(cfg.seed, step, g, cfg.groups_per_step);
            groups.push(rollout(&params, &reference, env, &ep, cfg, seed, exec)?);
        }
        let trajs: Vec<&Trajectory> = groups.iter().flat_map(|g| &g.trajectories).collect();
        let avg = |f: &dyn Fn(&Trajectory) -> f64| trajs.iter().map(|t| f(t)).sum::<f64>() / trajs.len() as f64;
        let mut record = RlRecord {
            step,
            mean_reward: avg(&|t| t.reward.total),
            mean_accuracy: avg(&|t| t.reward.accuracy),
            mean_visual_reward: avg(&|t| t.reward.visual),
            mean_vas: avg(&|t| t.vas),
            kl: 0.0,
            eval: None,
        };
        for epoch in 0..cfg.epochs_per_batch {
            let (stats, grads) = grpo_loss_grad(&params, &groups, cfg, exec)?;
            if epoch == 0 {
                record.kl = stats.kl;
            }
            params = opt.step(&params, &grads)?;
        }
        if !eval_set.is_empty() {
            record.eval = Some(evaluate(&params, env, &eval_set, exec)?);
        }
        history.push(record);
    }
    Ok(RlRun { params, history })
}
