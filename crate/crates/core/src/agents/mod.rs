//! The four trading agents: supervised pretraining, Q-mixing DDQN, replay
//! and exploration, and the joint training loop.

mod labels;
mod mixedq;
mod policy;
mod pretrain;
mod replay;
mod train;

pub use labels::{label_order, label_signal, SIGNAL_CLIP_PCT};
pub use mixedq::MixedQ;
pub use policy::{argmax, select_action, EpsilonSchedule};
pub use pretrain::{build_dataset, pretrain, regression_metrics, LabelConfig, LabeledSample, PretrainConfig, PretrainReport, RegressionMetrics};
pub use replay::{ReplayBuffer, SharedReplayBuffer, Transition};
pub use train::{
    backtest_day, run_episode, train_loop, BacktestEpisode, BsaGate, CurveRow, EpisodeRun, Replayable, TrainConfig,
    TrainOutput, CURVE_HEADER,
};

use thiserror::Error;

use crate::gym::{AgentRole, GymError};
use crate::marketdata::{LEVELS, SUB_WINDOWS, SUB_WINDOW_LEN, TRADE_FEATURES, WINDOW};
use crate::nn::{ArchConfig, NetworkSpec, NnError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("label needs prices up to index {needed}, path has {available}")]
    InsufficientFuture { needed: usize, available: usize },
    #[error("time {t} lies outside the order window of the signal at {signal}")]
    OutOfWindow { signal: usize, t: usize },
    #[error("operation does not apply to {0}")]
    WrongRole(AgentRole),
    #[error("pretraining dataset is empty")]
    EmptyDataset,
    #[error("update batch is empty")]
    EmptyBatch,
    #[error("no training episode can host a full run")]
    EmptyTrainSet,
    #[error("no pretrained network for {0}")]
    MissingPretrain(AgentRole),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gym(#[from] GymError),
}

/// Network layout for one agent; all but the buy-signal agent also take the
/// remaining-time scalar.
pub fn role_spec(arch: &ArchConfig, role: AgentRole) -> NetworkSpec {
    NetworkSpec::scalping(
        arch,
        [SUB_WINDOWS, SUB_WINDOW_LEN, LEVELS, 2],
        [WINDOW, TRADE_FEATURES],
        role.sees_remaining_time(),
    )
}
