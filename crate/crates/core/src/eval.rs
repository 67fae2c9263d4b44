//! Backtest metrics over per-episode net returns and the summary report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epfilter::EpisodeId;
use crate::gym::TraceTerminal;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no episode results")]
    EmptyResults,
    #[error("returns have zero standard deviation")]
    SigmaZero,
    #[error("equity never draws down")]
    ZeroDrawdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub id: EpisodeId,
    /// Percent, after costs; zero when nothing traded.
    pub net_return: f64,
    pub traded: bool,
    pub t1: Option<i64>,
    pub t2: Option<i64>,
    pub t3: Option<i64>,
    pub t4: Option<i64>,
}

impl EpisodeResult {
    pub fn from_terminal(id: EpisodeId, term: &TraceTerminal) -> EpisodeResult {
        EpisodeResult {
            id,
            net_return: if term.traded() { term.net } else { 0.0 },
            traded: term.traded(),
            t1: term.t1,
            t2: term.t2,
            t3: term.t3,
            t4: term.t4,
        }
    }
}

pub fn profit_per_episode(returns: &[f64]) -> Result<f64, MetricError> {
    if returns.is_empty() {
        return Err(MetricError::EmptyResults);
    }
    Ok(returns.iter().sum::<f64>() / returns.len() as f64)
}

/// Mean over sample standard deviation, per episode, zero risk-free rate.
pub fn sharpe(returns: &[f64]) -> Result<f64, MetricError> {
    let mean = profit_per_episode(returns)?;
    if returns.len() < 2 {
        return Err(MetricError::SigmaZero);
    }
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (returns.len() - 1) as f64;
    if var == 0.0 {
        return Err(MetricError::SigmaZero);
    }
    Ok(mean / var.sqrt())
}

/// Compounded equity after each episode, starting from 1.
pub fn equity_curve(returns: &[f64]) -> Vec<f64> {
    let mut e = 1.0;
    returns
        .iter()
        .map(|r| {
            e *= 1.0 + r / 100.0;
            e
        })
        .collect()
}

/// Deepest fall of the equity curve below its running peak, in percent (<= 0).
/// The starting equity counts as a peak.
pub fn max_drawdown(returns: &[f64]) -> Result<f64, MetricError> {
    if returns.is_empty() {
        return Err(MetricError::EmptyResults);
    }
    let mut peak: f64 = 1.0;
    let mut worst: f64 = 0.0;
    for e in equity_curve(returns) {
        peak = peak.max(e);
        worst = worst.min((e / peak - 1.0) * 100.0);
    }
    Ok(worst)
}

/// Total compounded return over the absolute drawdown.
pub fn calmar(returns: &[f64]) -> Result<f64, MetricError> {
    let mdd = max_drawdown(returns)?;
    if mdd == 0.0 {
        return Err(MetricError::ZeroDrawdown);
    }
    let total = (equity_curve(returns).last().copied().unwrap_or(1.0) - 1.0) * 100.0;
    Ok(total / mdd.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub trades: usize,
    pub profit_per_episode: Option<f64>,
    pub sharpe: Option<f64>,
    pub mdd: Option<f64>,
    pub calmar: Option<f64>,
}

impl MetricsReport {
    pub fn from_results(results: &[EpisodeResult]) -> MetricsReport {
        let r: Vec<f64> = results.iter().map(|x| x.net_return).collect();
        MetricsReport {
            episodes: r.len(),
            trades: results.iter().filter(|x| x.traded).count(),
            profit_per_episode: profit_per_episode(&r).ok(),
            sharpe: sharpe(&r).ok(),
            mdd: max_drawdown(&r).ok(),
            calmar: calmar(&r).ok(),
        }
    }
}

/// One metric row with its train and test values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub train: Option<f64>,
    pub test: Option<f64>,
}

pub const METRIC_NAMES: [&str; 4] = ["Profit per episode (%)", "Sharpe ratio", "MDD (%)", "Calmar ratio"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub rows: Vec<ReportRow>,
    pub train: MetricsReport,
    pub test: MetricsReport,
    pub config_hash: String,
    pub seeds: serde_json::Value,
}

impl BacktestReport {
    pub fn new(train: MetricsReport, test: MetricsReport, config_hash: String, seeds: serde_json::Value) -> BacktestReport {
        let pick = |m: &MetricsReport| [m.profit_per_episode, m.sharpe, m.mdd, m.calmar];
        let rows = METRIC_NAMES
            .iter()
            .zip(pick(&train).into_iter().zip(pick(&test)))
            .map(|(name, (tr, te))| ReportRow {
                metric: name.to_string(),
                train: tr,
                test: te,
            })
            .collect();
        BacktestReport {
            rows,
            train,
            test,
            config_hash,
            seeds,
        }
    }
}
