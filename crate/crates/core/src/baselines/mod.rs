//! Reference opponents and comparison learners: the rule-based scripted
//! AI that drives pretraining and fills opponent slots, a uniform random
//! policy, an exact tabular Q-learner for update-rule oracles, and a
//! conv-net DQN with target network and replay.

mod dqn;
mod scripted;
mod tabq;

pub use dqn::{
    context_for_generation, dqn_loss, greedy_action, static_target_board, train_dqn, DqnConfig,
    DqnConfigError, DqnRunReport, DqnScenario, DqnSpec, DqnTrainer, EpisodeOutcome, QNetwork,
    Transition, CONTEXT_DIM,
};
pub use scripted::{RandomPolicy, ScriptedPolicy};
pub use tabq::QTable;
