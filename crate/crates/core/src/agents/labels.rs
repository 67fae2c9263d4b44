//! Supervised targets for the first training stage, cut from the last-price path.

use super::AgentError;
use crate::gym::{reward_boa, reward_bsa, reward_soa, reward_ssa, AgentRole, RewardError};

/// Default band for signal labels, in percent.
pub const SIGNAL_CLIP_PCT: f64 = 2.0;

fn from_reward(e: RewardError) -> AgentError {
    match e {
        RewardError::InsufficientFuture { needed, available } => AgentError::InsufficientFuture { needed, available },
        RewardError::ZeroRemainingTime => AgentError::InsufficientFuture { needed: 0, available: 0 },
    }
}

/// Mean future rise (buy signal) or decline (sell signal) over `horizon`
/// seconds after `t`, clipped to `[-clip, clip]` when a clip is given.
pub fn label_signal(prices: &[f64], t: usize, role: AgentRole, horizon: usize, clip: Option<f64>) -> Result<f64, AgentError> {
    let raw = match role {
        AgentRole::Bsa => reward_bsa(prices, t, horizon).map_err(from_reward)?,
        AgentRole::Ssa => reward_ssa(prices, t, horizon).map_err(from_reward)?,
        other => return Err(AgentError::WrongRole(other)),
    };
    Ok(match clip {
        Some(c) => raw.clamp(-c, c),
        None => raw,
    })
}

/// Order label at `t` for a signal raised at `signal`: the buy-order reward
/// over `signal..=t`, or the return from the signal price for the sell order.
pub fn label_order(prices: &[f64], signal: usize, t: usize, role: AgentRole, deadline: usize) -> Result<f64, AgentError> {
    if t < signal || t > signal + deadline || t >= prices.len() {
        return Err(AgentError::OutOfWindow { signal, t });
    }
    match role {
        AgentRole::Boa => Ok(reward_boa(prices, signal, t)),
        AgentRole::Soa => Ok(reward_soa(prices[signal], prices[t])),
        other => Err(AgentError::WrongRole(other)),
    }
}
