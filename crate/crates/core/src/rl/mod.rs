//! Reward shaping, GRPO, and the grounded-lookup environment.

mod env;
mod grpo;
mod reward;
mod rollout;

pub use env::{Episode, GroundedLookup, LookupConfig, Score, Vocabulary};
pub use grpo::{
    clipped_surrogate, group_advantages, grpo_loss, grpo_loss_grad, GrpoStats, RLConfig, RewardRows, RolloutGroup,
    Trajectory, MAX_LOG_RATIO, STD_GUARD,
};
pub use reward::{total_reward, visual_reward, visual_reward_at, RewardBreakdown, RewardWeights};
pub use rollout::{policy_stats, rollout, sample_trajectory, train_rl, PolicyStats, RlRecord, RlRun};
