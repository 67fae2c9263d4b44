//! Seeded synthetic tick days written in the tick CSV layout.
//!
//! * `random-walk`: geometric random walk, no structure.
//! * `pattern`: a level-1 bid-size spike, then exactly `spike_len` seconds
//!   later a +1% step that holds for `hold` seconds before stepping back.
//! * `ramp`: a smooth rise to a planted peak and back, for filter checks.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::marketdata::{write_ticks, TickRecord, TickerMeta, LEVELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    RandomWalk,
    Pattern,
    Ramp,
}

impl FromStr for SynthKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random-walk" => Ok(SynthKind::RandomWalk),
            "pattern" => Ok(SynthKind::Pattern),
            "ramp" => Ok(SynthKind::Ramp),
            other => Err(format!("unknown synthetic kind {other:?} (random-walk, pattern, ramp)")),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::RandomWalk => "random-walk",
            SynthKind::Pattern => "pattern",
            SynthKind::Ramp => "ramp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    /// Seconds from the start of the size spike to the price step.
    pub spike_len: usize,
    /// Seconds the stepped-up price holds before stepping back.
    pub hold: usize,
    pub quiet_min: usize,
    pub quiet_max: usize,
    pub jump_pct: f64,
    /// Multiplier on the level-1 bid size during the spike.
    pub spike_factor: f64,
}

impl Default for PatternParams {
    fn default() -> Self {
        PatternParams {
            spike_len: 5,
            hold: 30,
            quiet_min: 20,
            quiet_max: 60,
            jump_pct: 1.0,
            spike_factor: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub seed: u64,
    pub days: usize,
    pub seconds_per_day: usize,
    /// Per-second log-return standard deviation, in percent.
    pub sigma_pct: f64,
    /// Share of days generated below the filter threshold.
    pub below_frac: f64,
    pub pattern: PatternParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: SynthKind::Pattern,
            seed: 0,
            days: 10,
            seconds_per_day: 1800,
            sigma_pct: 0.01,
            below_frac: 0.2,
            pattern: PatternParams::default(),
        }
    }
}

pub const PREV_CLOSE: f64 = 10_000.0;
/// First second of the trading day (09:00:00).
pub const DAY_OPEN_TS: i64 = 9 * 3600;
const TICK: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct SynthDay {
    pub ticker: String,
    pub date: NaiveDate,
    pub meta: TickerMeta,
    pub records: Vec<TickRecord>,
    /// Indices where a size spike starts (`pattern` only).
    pub spikes: Vec<usize>,
    /// Intended peak rise over the previous close, in percent.
    pub planted_peak_pct: f64,
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn trading_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2018, 4, 2).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

pub fn generate(cfg: &SynthConfig) -> Vec<SynthDay> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    trading_days(cfg.days)
        .into_iter()
        .enumerate()
        .map(|(i, date)| {
            let below = rng.random::<f64>() < cfg.below_frac;
            let ticker = format!("SYN{:03}", i % 10);
            generate_day(cfg, ticker, date, below, &mut rng)
        })
        .collect()
}

fn generate_day<R: Rng>(cfg: &SynthConfig, ticker: String, date: NaiveDate, below: bool, rng: &mut R) -> SynthDay {
    let n = cfg.seconds_per_day;
    let gap = if below {
        rng.random_range(0.0..10.0)
    } else {
        rng.random_range(15.0..20.0)
    };
    let open = PREV_CLOSE * (1.0 + gap / 100.0);
    let noise = Normal::new(0.0, cfg.sigma_pct / 100.0).expect("finite sigma");
    let mut spikes = Vec::new();
    let mut spike_on = vec![false; n];
    let (last, planted): (Vec<f64>, f64) = match cfg.kind {
        SynthKind::RandomWalk => {
            let mut p = open;
            let path = (0..n)
                .map(|i| {
                    if i > 0 {
                        p *= noise.sample(rng).exp();
                    }
                    cents(p)
                })
                .collect();
            (path, gap)
        }
        SynthKind::Pattern => {
            let pp = cfg.pattern;
            // step seconds carry no noise so the move is exactly jump_pct
            let mut step = vec![1.0; n];
            let mut s = 120 + rng.random_range(pp.quiet_min..=pp.quiet_max);
            while s + pp.spike_len + pp.hold < n {
                spikes.push(s);
                spike_on[s..s + pp.spike_len].fill(true);
                step[s + pp.spike_len] = 1.0 + pp.jump_pct / 100.0;
                step[s + pp.spike_len + pp.hold] = 1.0 / (1.0 + pp.jump_pct / 100.0);
                s += pp.spike_len + pp.hold + rng.random_range(pp.quiet_min..=pp.quiet_max);
            }
            let mut p = open;
            let mut prev_cents = cents(p);
            let path = (0..n)
                .map(|i| {
                    if i == 0 {
                        return prev_cents;
                    }
                    let c = if step[i] != 1.0 {
                        cents(prev_cents * step[i])
                    } else {
                        p *= noise.sample(rng).exp();
                        cents(p)
                    };
                    p = c;
                    prev_cents = c;
                    c
                })
                .collect();
            (path, gap + pp.jump_pct)
        }
        SynthKind::Ramp => {
            let peak = if below {
                rng.random_range(5.0..15.0)
            } else {
                rng.random_range(15.0..25.0)
            };
            let apex = rng.random_range(n / 4..3 * n / 4);
            let path = (0..n)
                .map(|i| {
                    let frac = if i <= apex {
                        i as f64 / apex as f64
                    } else {
                        1.0 - (i - apex) as f64 / (n - apex) as f64
                    };
                    cents(PREV_CLOSE * (1.0 + peak / 100.0 * frac))
                })
                .collect();
            (path, peak)
        }
    };
    let records = book_around(&last, &spike_on, cfg.pattern.spike_factor, rng);
    SynthDay {
        meta: TickerMeta {
            ticker: ticker.clone(),
            prev_close: PREV_CLOSE,
            shares_outstanding: 20_000_000.0,
            shares_majority: 8_000_000.0,
        },
        ticker,
        date,
        records,
        spikes,
        planted_peak_pct: planted,
    }
}

/// Builds full records around a last-price path.
fn book_around<R: Rng>(last: &[f64], spike_on: &[bool], spike_factor: f64, rng: &mut R) -> Vec<TickRecord> {
    let open = last[0];
    let (mut high, mut low) = (open, open);
    last.iter()
        .zip(spike_on)
        .enumerate()
        .map(|(i, (&p, &spike))| {
            high = high.max(p);
            low = low.min(p);
            let mut bid_amount: [f64; LEVELS] = std::array::from_fn(|_| rng.random_range(100..1000) as f64);
            let ask_amount: [f64; LEVELS] = std::array::from_fn(|_| rng.random_range(100..1000) as f64);
            if spike {
                bid_amount[0] *= spike_factor;
            }
            let sell = rng.random_range(0..60) as f64;
            let buy = rng.random_range(0..60) as f64;
            TickRecord {
                timestamp: DAY_OPEN_TS + i as i64,
                bid_price: std::array::from_fn(|l| cents(p - TICK / 2.0 - TICK * l as f64)),
                ask_price: std::array::from_fn(|l| cents(p + TICK / 2.0 + TICK * l as f64)),
                bid_amount,
                ask_amount,
                last_price: p,
                trade_volume: sell + buy,
                sell_dir_volume: sell,
                wavg_sell_price: cents(p - TICK / 2.0),
                buy_dir_volume: buy,
                wavg_buy_price: cents(p + TICK / 2.0),
                total_dir_volume: sell + buy,
                wavg_total_price: p,
                open_price: open,
                high_price: high,
                low_price: low,
            }
        })
        .collect()
}

/// Writes `<dir>/<ticker>/<date>.csv` and the matching `.json` metadata.
pub fn write_universe(days: &[SynthDay], dir: &Path) -> io::Result<()> {
    for d in days {
        let tdir = dir.join(&d.ticker);
        fs::create_dir_all(&tdir)?;
        let file = fs::File::create(tdir.join(format!("{}.csv", d.date)))?;
        write_ticks(io::BufWriter::new(file), &d.records)?;
        fs::write(tdir.join(format!("{}.json", d.date)), d.meta.to_json())?;
    }
    Ok(())
}
