//! Shaped reward, returns and advantages, the loss family, and the two
//! training stages.

mod loss;
mod returns;
mod reward;

pub use loss::{check_lambda_rl, il_loss, il_loss_graph, ppo_clip_graph, ppo_clip_objective, total_loss, value_loss, LossReport};
pub use returns::{compute_gae, discounted_return, normalize_advantages, GaeInput};
pub use reward::{compute_reward, compute_reward_with_waypoint, reward_terms, wrapped_angle_diff, HeadingReference, RewardConfig, RewardTerms};
mod stage1;
pub use stage1::{sample_refs, supervised_batch, supervised_composite, train_stage1, value_label_stats, CompositeVars, EpochLosses, SampleRef, Stage1Config, Stage1Result, SupervisedBatch};
mod stage2;
pub use stage2::{
    collect_rollout, critic_value_loss, critic_values, probe_success_rate, rollout_episode, rollout_targets, stage2_curve_csv, train_stage2, PpoConfig, Rollout, Stage2Data, Stage2Result,
    StopBootstrap, Transition, UpdateStats, ValueInputs, RATIO_EXPLOSION, STAGE2_CURVE_COLUMNS,
};
mod corridor;
pub use corridor::{corridor_pairs, corridor_probe, train_corridor, CorridorConfig, CorridorPolicy, CorridorResult, CorridorUpdate, CORRIDOR_ACTIONS};

#[cfg(test)]
mod tests;
