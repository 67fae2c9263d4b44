//! Episode selection: keep ticker-days whose intraday peak clears a rise
//! threshold over the previous close, then split them into train and test.

use std::fmt;
use std::sync::Arc;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::{scale_price, MarketDataError, TickRecord, TickerMeta};

pub const DEFAULT_THRESHOLD_PCT: f64 = 15.0;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("need at least 2 episodes to split, got {0}")]
    TooFewEpisodes(usize),
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("episode records are empty")]
    EmptyEpisode,
    #[error("episode records are not contiguous seconds at index {0}")]
    NonContiguous(usize),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeId {
    pub ticker: String,
    pub date: NaiveDate,
}

impl fmt::Display for EpisodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.ticker, self.date)
    }
}

impl EpisodeId {
    /// Parses a manifest line `ticker,YYYY-MM-DD`.
    pub fn parse(line: &str) -> Option<EpisodeId> {
        let (ticker, date) = line.trim().split_once(',')?;
        Some(EpisodeId {
            ticker: ticker.trim().to_string(),
            date: date.trim().parse().ok()?,
        })
    }

    /// File stem used for per-episode artifacts.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.ticker, self.date)
    }
}

/// One ticker-day of replayable ticks.
#[derive(Debug, Clone)]
pub struct Episode {
    pub id: EpisodeId,
    pub records: Arc<[TickRecord]>,
    pub meta: TickerMeta,
    /// Highest scaled last price of the day, in percent over the previous close.
    pub rise_pct: f64,
}

impl Episode {
    pub fn new(
        ticker: impl Into<String>,
        date: NaiveDate,
        records: Vec<TickRecord>,
        meta: TickerMeta,
    ) -> Result<Episode, FilterError> {
        meta.validate()?;
        if records.is_empty() {
            return Err(FilterError::EmptyEpisode);
        }
        if let Some(i) = records.windows(2).position(|w| w[1].timestamp != w[0].timestamp + 1) {
            return Err(FilterError::NonContiguous(i + 1));
        }
        let mut rise_pct = f64::NEG_INFINITY;
        for r in &records {
            rise_pct = rise_pct.max(scale_price(r.last_price, meta.prev_close)?);
        }
        Ok(Episode {
            id: EpisodeId {
                ticker: ticker.into(),
                date,
            },
            records: records.into(),
            meta,
            rise_pct,
        })
    }

    /// Index of the first second whose last price clears `threshold`.
    pub fn trigger_index(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .position(|r| scale_price(r.last_price, self.meta.prev_close).is_ok_and(|p| p >= threshold))
    }
}

/// Episodes whose intraday peak rise is at least `threshold` percent (inclusive).
pub fn filter_universe(episodes: &[Episode], threshold: f64) -> Vec<Episode> {
    episodes
        .iter()
        .filter(|e| e.rise_pct >= threshold)
        .cloned()
        .collect()
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Episode>,
    pub test: Vec<Episode>,
    pub seed: u64,
    pub ratio: f64,
}

impl DatasetSplit {
    pub fn train_ids(&self) -> Vec<EpisodeId> {
        sorted_ids(&self.train)
    }

    pub fn test_ids(&self) -> Vec<EpisodeId> {
        sorted_ids(&self.test)
    }
}

fn sorted_ids(eps: &[Episode]) -> Vec<EpisodeId> {
    let mut ids: Vec<EpisodeId> = eps.iter().map(|e| e.id.clone()).collect();
    ids.sort();
    ids
}

/// Seeded shuffle, then the first `floor(ratio * n)` episodes train (at least
/// one episode lands on each side).
pub fn split_train_test(episodes: &[Episode], ratio: f64, seed: u64) -> Result<DatasetSplit, FilterError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(FilterError::InvalidRatio(ratio));
    }
    let n = episodes.len();
    if n < 2 {
        return Err(FilterError::TooFewEpisodes(n));
    }
    // order by id first so the partition does not depend on input order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| episodes[a].id.cmp(&episodes[b].id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| episodes[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        test: pick(&order[n_train..]),
        seed,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::testutil::{flat_day, meta};
    use std::collections::HashSet;

    pub(crate) fn episode_with_peak(ticker: &str, day: u32, peak_pct: f64) -> Episode {
        let m = meta();
        let base = m.prev_close * 1.01;
        let mut recs = flat_day(50, base);
        let peak = m.prev_close + m.prev_close * peak_pct / 100.0;
        recs[25].last_price = peak;
        for r in &mut recs {
            r.high_price = r.high_price.max(peak);
            r.low_price = r.low_price.min(peak);
        }
        let date = NaiveDate::from_ymd_opt(2018, 4, day).unwrap();
        Episode::new(ticker, date, recs, m).unwrap()
    }

    #[test]
    fn boundary_is_inclusive() {
        let at = episode_with_peak("A", 2, 15.0);
        assert_eq!(at.rise_pct, 15.0);
        let below = episode_with_peak("B", 2, 14.99);
        let kept = filter_universe(&[at, below], 15.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id.ticker, "A");
    }

    #[test]
    fn trigger_index_finds_first_crossing() {
        let e = episode_with_peak("A", 2, 20.0);
        assert_eq!(e.trigger_index(15.0), Some(25));
        assert_eq!(e.trigger_index(25.0), None);
    }

    #[test]
    fn ten_episodes_split_seven_three() {
        let eps: Vec<Episode> = (1..=10).map(|d| episode_with_peak("A", d, 16.0)).collect();
        let split = split_train_test(&eps, 0.7, 42).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (7, 3));
        let train: HashSet<_> = split.train_ids().into_iter().collect();
        let test: HashSet<_> = split.test_ids().into_iter().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 10);
    }

    #[test]
    fn same_seed_same_partition() {
        let eps: Vec<Episode> = (1..=20).map(|d| episode_with_peak("A", d, 16.0)).collect();
        let a = split_train_test(&eps, 0.7, 5).unwrap();
        let mut reversed = eps.clone();
        reversed.reverse();
        let b = split_train_test(&reversed, 0.7, 5).unwrap();
        assert_eq!(a.train_ids(), b.train_ids());
        assert_eq!(a.test_ids(), b.test_ids());
    }

    #[test]
    fn split_errors() {
        let one = vec![episode_with_peak("A", 2, 16.0)];
        assert!(matches!(split_train_test(&one, 0.7, 1), Err(FilterError::TooFewEpisodes(1))));
        let two = vec![episode_with_peak("A", 2, 16.0), episode_with_peak("A", 3, 16.0)];
        assert!(matches!(split_train_test(&two, 1.0, 1), Err(FilterError::InvalidRatio(_))));
        let s = split_train_test(&two, 0.7, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
    }

    #[test]
    fn non_contiguous_records_are_rejected() {
        let mut recs = flat_day(5, 10_000.0);
        recs[3].timestamp = 10;
        recs[4].timestamp = 11;
        let date = NaiveDate::from_ymd_opt(2018, 4, 2).unwrap();
        assert!(matches!(Episode::new("A", date, recs, meta()), Err(FilterError::NonContiguous(3))));
    }

    #[test]
    fn manifest_line_round_trip() {
        let id = EpisodeId {
            ticker: "005930".into(),
            date: NaiveDate::from_ymd_opt(2018, 5, 14).unwrap(),
        };
        assert_eq!(id.to_string(), "005930,2018-05-14");
        assert_eq!(EpisodeId::parse(&id.to_string()), Some(id));
        assert_eq!(EpisodeId::parse("garbage"), None);
    }
}
