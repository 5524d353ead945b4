//! Actor-critic training for the graph-based policy: replay buffer,
//! exploration, critic/actor losses, target tracking, and the two-stage
//! loop (graph pretraining, then self-play against the scripted AI).

pub mod ddpg;
pub mod magnet;
pub mod metrics;
pub mod replay;

pub use ddpg::{annealed_sigma, actor_loss, critic_loss, explore, soft_update, CriticBatch};
pub use magnet::{
    evaluate_team, train_magnet, ActorCriticPair, AgentSlot, DecisionModule, EvalStats,
    MagnetTeam, MagnetTrainer, NextSlot, ReplayTransition, TrainConfig, TrainError, TrainOutput,
};
pub use metrics::{
    parse_metrics, read_metrics, render_metrics, wilson, write_metrics, MetricError, MetricRow,
    WilsonInterval, METRIC_HEADER, Z95,
};
pub use replay::ReplayBuffer;
