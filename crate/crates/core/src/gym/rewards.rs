//! Per-agent primary rewards and the cooperative shared term. Prices are the
//! last-price path indexed by second; every reward is a percent ratio.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("reward needs prices up to index {needed}, path has {available}")]
    InsufficientFuture { needed: usize, available: usize },
    #[error("no remaining time after the sell signal")]
    ZeroRemainingTime,
}

/// Factor applied to the sum of the other agents' rewards.
pub const SHARE_FACTOR: f64 = 0.5;

fn pct(p: f64, base: f64) -> f64 {
    (p - base) / base * 100.0
}

fn future(prices: &[f64], from: usize, len: usize) -> Result<&[f64], RewardError> {
    let end = from + len;
    if end >= prices.len() {
        return Err(RewardError::InsufficientFuture {
            needed: end,
            available: prices.len(),
        });
    }
    Ok(&prices[from + 1..=end])
}

/// Mean rise over the `horizon` seconds after the buy signal.
pub fn reward_bsa(prices: &[f64], t1: usize, horizon: usize) -> Result<f64, RewardError> {
    let ahead = future(prices, t1, horizon)?;
    if horizon == 0 {
        return Ok(0.0);
    }
    let base = prices[t1];
    Ok(ahead.iter().map(|&p| pct(p, base)).sum::<f64>() / horizon as f64)
}

/// Purchase price against the lowest price seen between signal and purchase.
/// Never negative, since the window includes the purchase second.
pub fn reward_boa(prices: &[f64], t1: usize, t2: usize) -> f64 {
    assert!(t1 <= t2 && t2 < prices.len(), "buy order window out of range");
    let low = prices[t1..=t2].iter().copied().fold(f64::INFINITY, f64::min);
    pct(prices[t2], low)
}

/// Mean decline over the seconds left before the deadline.
pub fn reward_ssa(prices: &[f64], t3: usize, lt3: usize) -> Result<f64, RewardError> {
    if lt3 == 0 {
        return Err(RewardError::ZeroRemainingTime);
    }
    let ahead = future(prices, t3, lt3)?;
    let base = prices[t3];
    Ok(ahead.iter().map(|&p| -pct(p, base)).sum::<f64>() / lt3 as f64)
}

/// Realized return of the round trip.
pub fn reward_soa(p_t2: f64, p_t4: f64) -> f64 {
    pct(p_t4, p_t2)
}

pub fn shared_rewards(primary: [f64; 4]) -> [f64; 4] {
    // summing the others directly avoids the rounding of total - own
    std::array::from_fn(|i| {
        SHARE_FACTOR
            * primary
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, r)| r)
                .sum::<f64>()
    })
}

/// Everything an episode pays out, delivered once at termination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub primary: [f64; 4],
    pub shared: [f64; 4],
    pub gross_return: f64,
    pub net_return: f64,
    pub traded: bool,
}

impl RewardVector {
    pub fn no_trade() -> RewardVector {
        RewardVector {
            primary: [0.0; 4],
            shared: [0.0; 4],
            gross_return: 0.0,
            net_return: 0.0,
            traded: false,
        }
    }

    /// Terminal learning signal for agent `i`.
    pub fn total(&self, i: usize) -> f64 {
        self.primary[i] + self.shared[i]
    }
}
