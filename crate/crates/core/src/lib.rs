//! Multi-agent reinforcement learning on a bomberman-style gridworld.
//!
//! The library is organized bottom-up:
//!
//! - [`autodiff`]: reverse-mode automatic differentiation over dense f64
//!   arrays, with Adam and a binary parameter checkpoint format.
//! - [`layers`]: network building blocks (MLP, LSTM cell, self-attention,
//!   conv encoder) built on the autodiff graph.
//! - [`gridworld`]: the deterministic team-match environment, observation
//!   encoding, object enumeration and episode logs.
//! - [`graphgen`]: the relevance-graph generator and its two-part loss.
//! - [`msgpass`]: typed message passing over the relevance graph and the
//!   action-choice head.
//! - [`training`]: replay buffer, actor-critic losses, exploration and the
//!   two-stage training loop.
//! - [`baselines`]: scripted heuristic AI, tabular Q-learning and a DQN
//!   learner.
//! - [`harness`]: experiment configuration, checkpoints, tournaments, the
//!   ablation matrix and the gradient-check suite.

pub mod autodiff;
pub mod baselines;
mod bytes;
pub mod graphgen;
pub mod gridworld;
pub mod layers;
pub mod msgpass;
pub mod rng;
pub mod training;
