//! Residual-PD motion tracking trained with asymmetric PPO.

pub mod env;
pub mod features;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod rollout;
pub mod train;

pub use env::{env_rng, state_from_frame, terrain_for, StepInfo, TaskSpec, TrackEnv, CONTROL_DT};
pub use policy::{Critic, Policy, CRITIC_HIDDEN, POLICY_HIDDEN};
pub use ppo::{fit_critic, gae, normalize_advantages, ppo_update, surrogate, Actor, PpoHyper, PpoStats, RolloutBatch};
pub use reward::{
    canonicalize_action, check_termination, compute_reward, exceeds_threshold, mean_link_error,
    measure, Reward, RewardInputs, RewardSigmas, RewardWeights, FAIL_DISTANCE, TERM_NAMES,
};
pub use rollout::{RolloutStats, StepHook, VecEnv};
pub use train::{curve_csv, fresh_networks, nominal_sr, train_policy, train_specialist, CurveRow, TrainConfig, TrainOutcome};
