//! Per-second tick records and the CSV contract they are read from.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::MarketDataError;

/// Order book depth carried by every record.
pub const LEVELS: usize = 10;

/// Number of columns in a tick CSV row.
pub const CSV_COLUMNS: usize = 1 + 4 * LEVELS + 11;

/// One second of market state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub timestamp: i64,
    pub bid_price: [f64; LEVELS],
    pub ask_price: [f64; LEVELS],
    pub bid_amount: [f64; LEVELS],
    pub ask_amount: [f64; LEVELS],
    pub last_price: f64,
    pub trade_volume: f64,
    pub sell_dir_volume: f64,
    pub wavg_sell_price: f64,
    pub buy_dir_volume: f64,
    pub wavg_buy_price: f64,
    pub total_dir_volume: f64,
    pub wavg_total_price: f64,
    pub open_price: f64,
    pub high_price: f64,
    pub low_price: f64,
}

impl TickRecord {
    /// Checks the book and price-range invariants, returning a reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        let all = self
            .bid_price
            .iter()
            .chain(&self.ask_price)
            .chain(&self.bid_amount)
            .chain(&self.ask_amount)
            .chain([
                &self.last_price,
                &self.trade_volume,
                &self.sell_dir_volume,
                &self.wavg_sell_price,
                &self.buy_dir_volume,
                &self.wavg_buy_price,
                &self.total_dir_volume,
                &self.wavg_total_price,
                &self.open_price,
                &self.high_price,
                &self.low_price,
            ]);
        for v in all {
            if !v.is_finite() || *v < 0.0 {
                return Err(format!("value {v} is negative or not finite"));
            }
        }
        if self.bid_price[0] <= 0.0 {
            return Err("best bid must be positive".into());
        }
        if self.ask_price[0] < self.bid_price[0] {
            return Err(format!(
                "crossed book: ask {} < bid {}",
                self.ask_price[0], self.bid_price[0]
            ));
        }
        if self.ask_price.windows(2).any(|w| w[1] < w[0]) {
            return Err("ask levels must be nondecreasing".into());
        }
        if self.bid_price.windows(2).any(|w| w[1] > w[0]) {
            return Err("bid levels must be nonincreasing".into());
        }
        if !(self.low_price <= self.last_price && self.last_price <= self.high_price) {
            return Err(format!(
                "last {} outside day range [{}, {}]",
                self.last_price, self.low_price, self.high_price
            ));
        }
        Ok(())
    }

    /// Copy used to fill a missing second: same book, no trading activity.
    fn carried_to(&self, timestamp: i64) -> TickRecord {
        TickRecord {
            timestamp,
            trade_volume: 0.0,
            sell_dir_volume: 0.0,
            buy_dir_volume: 0.0,
            total_dir_volume: 0.0,
            ..self.clone()
        }
    }

    fn from_fields(fields: &[f64], timestamp: i64) -> TickRecord {
        let levels = |offset: usize| -> [f64; LEVELS] {
            let mut out = [0.0; LEVELS];
            out.copy_from_slice(&fields[offset..offset + LEVELS]);
            out
        };
        // fields[0] is the timestamp column
        let tail = 1 + 4 * LEVELS;
        TickRecord {
            timestamp,
            bid_price: levels(1),
            bid_amount: levels(1 + LEVELS),
            ask_price: levels(1 + 2 * LEVELS),
            ask_amount: levels(1 + 3 * LEVELS),
            last_price: fields[tail],
            trade_volume: fields[tail + 1],
            sell_dir_volume: fields[tail + 2],
            wavg_sell_price: fields[tail + 3],
            buy_dir_volume: fields[tail + 4],
            wavg_buy_price: fields[tail + 5],
            total_dir_volume: fields[tail + 6],
            wavg_total_price: fields[tail + 7],
            open_price: fields[tail + 8],
            high_price: fields[tail + 9],
            low_price: fields[tail + 10],
        }
    }
}

/// Per ticker-day metadata needed for scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerMeta {
    pub ticker: String,
    pub prev_close: f64,
    pub shares_outstanding: f64,
    pub shares_majority: f64,
}

impl TickerMeta {
    /// Shares available to the market (outstanding minus the majority stake).
    pub fn free_float(&self) -> f64 {
        self.shares_outstanding - self.shares_majority
    }

    pub fn validate(&self) -> Result<(), MarketDataError> {
        if !(self.prev_close > 0.0) {
            return Err(MarketDataError::NonPositiveBase(self.prev_close));
        }
        if !(self.shares_majority >= 0.0 && self.free_float() > 0.0) {
            return Err(MarketDataError::InvalidFloat {
                outstanding: self.shares_outstanding,
                majority: self.shares_majority,
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<TickerMeta, MarketDataError> {
        let meta: TickerMeta =
            serde_json::from_str(text).map_err(|e| MarketDataError::BadMeta(e.to_string()))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("meta serializes")
    }
}

/// Column names of the tick CSV, in order.
pub fn csv_header() -> Vec<String> {
    let mut cols = vec!["ts".to_string()];
    for prefix in ["bp", "bv", "ap", "av"] {
        cols.extend((1..=LEVELS).map(|i| format!("{prefix}{i}")));
    }
    cols.extend(
        [
            "last", "vol", "svol", "swap", "bvol", "bwap", "tvol", "twap", "open", "high", "low",
        ]
        .map(String::from),
    );
    cols
}

/// Reads a tick CSV into a gap-free, strictly increasing sequence of records.
///
/// Seconds missing from the file are filled with a copy of the preceding
/// record whose four volume fields are zeroed.
pub fn parse_ticks<R: Read>(input: R, meta: &TickerMeta) -> Result<Vec<TickRecord>, MarketDataError> {
    meta.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);

    let header = reader
        .headers()
        .map_err(|e| MarketDataError::malformed(1, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(MarketDataError::EmptyStream);
    }
    let expected = csv_header();
    if header.len() != CSV_COLUMNS || header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
        return Err(MarketDataError::malformed(1, "header does not match the tick contract"));
    }

    let mut records: Vec<TickRecord> = Vec::new();
    let mut fields = vec![0.0; CSV_COLUMNS];
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            MarketDataError::malformed(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != CSV_COLUMNS {
            return Err(MarketDataError::malformed(
                line,
                format!("expected {CSV_COLUMNS} columns, found {}", row.len()),
            ));
        }
        let timestamp: i64 = row[0]
            .trim()
            .parse()
            .map_err(|_| MarketDataError::malformed(line, format!("bad timestamp {:?}", &row[0])))?;
        for (i, cell) in row.iter().enumerate().skip(1) {
            fields[i] = cell
                .trim()
                .parse()
                .map_err(|_| MarketDataError::malformed(line, format!("bad number {cell:?} in column {}", i + 1)))?;
        }
        let record = TickRecord::from_fields(&fields, timestamp);
        record
            .validate()
            .map_err(|reason| MarketDataError::malformed(line, reason))?;

        if let Some(prev) = records.last() {
            if timestamp <= prev.timestamp {
                return Err(MarketDataError::NonMonotoneTime {
                    line,
                    previous: prev.timestamp,
                    timestamp,
                });
            }
            let prev = prev.clone();
            records.extend((prev.timestamp + 1..timestamp).map(|ts| prev.carried_to(ts)));
        }
        records.push(record);
    }

    if records.is_empty() {
        return Err(MarketDataError::EmptyStream);
    }
    Ok(records)
}

/// Writes records in the tick CSV layout (prices to two decimals, volumes as integers).
pub fn write_ticks<W: Write>(out: W, records: &[TickRecord]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "{}", csv_header().join(","))?;
    for r in records {
        write!(w, "{}", r.timestamp)?;
        for (values, is_price) in [
            (&r.bid_price, true),
            (&r.bid_amount, false),
            (&r.ask_price, true),
            (&r.ask_amount, false),
        ] {
            for v in values {
                write_cell(&mut w, *v, is_price)?;
            }
        }
        for (v, is_price) in [
            (r.last_price, true),
            (r.trade_volume, false),
            (r.sell_dir_volume, false),
            (r.wavg_sell_price, true),
            (r.buy_dir_volume, false),
            (r.wavg_buy_price, true),
            (r.total_dir_volume, false),
            (r.wavg_total_price, true),
            (r.open_price, true),
            (r.high_price, true),
            (r.low_price, true),
        ] {
            write_cell(&mut w, v, is_price)?;
        }
        writeln!(w)?;
    }
    w.flush()
}

fn write_cell<W: Write>(w: &mut W, v: f64, is_price: bool) -> std::io::Result<()> {
    if is_price {
        write!(w, ",{v:.2}")
    } else {
        write!(w, ",{v:.0}")
    }
}
