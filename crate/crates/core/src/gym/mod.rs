//! Episode replay through the buy-signal / buy-order / sell-signal /
//! sell-order phase machine, with rewards, the deadline and costs.

mod config;
mod costs;
mod env;
mod rewards;

pub use config::{EnvConfig, FillMode};
pub use costs::{apply_costs, CostMode, CostModel};
pub use env::{
    AgentAction, AgentRole, ObsBundle, Phase, PhaseState, PreparedEpisode, StepInfo, StepOutcome,
    TraceStep, TraceTerminal, TradingEnv,
};
pub use rewards::{
    reward_boa, reward_bsa, reward_soa, reward_ssa, shared_rewards, RewardError, RewardVector,
    SHARE_FACTOR,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GymError {
    #[error("start {start} has only {available} seconds of history, need 120")]
    InsufficientHistory { start: i64, available: usize },
    #[error("start {start} leaves {remaining} seconds, need {needed}")]
    EpisodeTooShort {
        start: i64,
        needed: usize,
        remaining: usize,
    },
    #[error("{got} acted while {expected} is active")]
    WrongAgent { expected: AgentRole, got: AgentRole },
    #[error("action must be 0 or 1, got {0}")]
    InvalidAction(u8),
    #[error("episode already finished")]
    SteppedAfterDone,
    #[error("environment has not been reset")]
    NotReset,
}
