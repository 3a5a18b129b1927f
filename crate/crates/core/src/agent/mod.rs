//! Curiosity-driven attention actor-critic and a tabular Q-learning baseline.

pub mod policy;
pub mod qlearn;
pub mod replay;
pub mod train;

pub use policy::{advantage, total_reward, Actor, ActorConfig, Critic};
pub use qlearn::{q_baseline_train, QConfig, QResult, QTable};
pub use replay::{Experience, HistoryWindow, ReplayBuffer};
pub use train::{
    evaluate, history_row, total_reward_bounds, train, Agent, EpisodeMetrics, TrainConfig,
    TrainResult,
};
