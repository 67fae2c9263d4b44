//! Tick parsing, price/volume scaling and observation windows.

mod observation;
mod scale;
mod tick;

pub use observation::{
    build_observation, center_window, centered_views, is_price_column, scale_record, split_views, ObsViews, ObservationTensor,
    ScaledDay, COL_ASK_AMOUNT, COL_ASK_PRICE, COL_BID_AMOUNT, COL_BID_PRICE, COL_LAST, FEATURES,
    SUB_WINDOWS, SUB_WINDOW_LEN, TRADE_FEATURES, WINDOW,
};
pub(crate) use observation::split_window;
pub use scale::{scale_price, scale_shares, ZERO_VOLUME_SENTINEL};
pub use tick::{csv_header, parse_ticks, write_ticks, TickRecord, TickerMeta, CSV_COLUMNS, LEVELS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("timestamp {timestamp} at line {line} does not follow {previous}")]
    NonMonotoneTime { line: u64, previous: i64, timestamp: i64 },
    #[error("tick stream has no records")]
    EmptyStream,
    #[error("scaling base must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("free float must be positive (outstanding {outstanding}, majority {majority})")]
    InvalidFloat { outstanding: f64, majority: f64 },
    #[error("observation at t={t} needs 120 prior seconds, only {available} available")]
    InsufficientHistory { t: i64, available: usize },
    #[error("timestamp {0} not present in the records")]
    UnknownTimestamp(i64),
    #[error("bad ticker metadata: {0}")]
    BadMeta(String),
}

impl MarketDataError {
    pub(crate) fn malformed(line: u64, reason: impl Into<String>) -> Self {
        MarketDataError::MalformedRow {
            line,
            reason: reason.into(),
        }
    }
}
