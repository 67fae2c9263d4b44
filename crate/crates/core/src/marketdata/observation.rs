//! Fixed-window observation matrices and the convolution views cut from them.

use super::scale::{log_share, pct_change};
use super::{MarketDataError, TickRecord, TickerMeta, LEVELS};
use crate::nn::Tensor;

/// Seconds of history in one observation.
pub const WINDOW: usize = 120;
/// Scaled features per second.
pub const FEATURES: usize = 51;
/// Sub-windows the history is cut into for the book convolutions.
pub const SUB_WINDOWS: usize = 12;
/// Seconds per sub-window.
pub const SUB_WINDOW_LEN: usize = WINDOW / SUB_WINDOWS;
/// Trade-flow columns (last price through day low).
pub const TRADE_FEATURES: usize = 11;

pub const COL_BID_PRICE: usize = 0;
pub const COL_ASK_PRICE: usize = 10;
pub const COL_BID_AMOUNT: usize = 20;
pub const COL_ASK_AMOUNT: usize = 30;
pub const COL_LAST: usize = 40;

/// Columns holding prices; every other column holds a share count.
pub fn is_price_column(col: usize) -> bool {
    matches!(col, 0..=19 | 40 | 43 | 45 | 47 | 48 | 49 | 50)
}

/// Writes the 51 scaled features of one record into `out`.
pub fn scale_record(rec: &TickRecord, meta: &TickerMeta, out: &mut [f64]) {
    debug_assert_eq!(out.len(), FEATURES);
    let p = |v: f64| pct_change(v, meta.prev_close);
    let float = meta.free_float();
    let s = |v: f64| log_share(v, float);
    for l in 0..LEVELS {
        out[COL_BID_PRICE + l] = p(rec.bid_price[l]);
        out[COL_ASK_PRICE + l] = p(rec.ask_price[l]);
        out[COL_BID_AMOUNT + l] = s(rec.bid_amount[l]);
        out[COL_ASK_AMOUNT + l] = s(rec.ask_amount[l]);
    }
    out[40] = p(rec.last_price);
    out[41] = s(rec.trade_volume);
    out[42] = s(rec.sell_dir_volume);
    out[43] = p(rec.wavg_sell_price);
    out[44] = s(rec.buy_dir_volume);
    out[45] = p(rec.wavg_buy_price);
    out[46] = s(rec.total_dir_volume);
    out[47] = p(rec.wavg_total_price);
    out[48] = p(rec.open_price);
    out[49] = p(rec.high_price);
    out[50] = p(rec.low_price);
}

/// 120 x 51 matrix of scaled features, oldest second first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTensor {
    data: Vec<f64>,
}

impl ObservationTensor {
    pub fn from_rows(data: Vec<f64>) -> ObservationTensor {
        assert_eq!(data.len(), WINDOW * FEATURES, "observation must be 120x51");
        ObservationTensor { data }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * FEATURES + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * FEATURES..(row + 1) * FEATURES]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Builds the observation ending at timestamp `t`.
///
/// `records` must be sorted and gap-free (as produced by `parse_ticks`). At
/// least 120 records must precede `t`.
pub fn build_observation(
    records: &[TickRecord],
    t: i64,
    meta: &TickerMeta,
) -> Result<ObservationTensor, MarketDataError> {
    meta.validate()?;
    let idx = records
        .binary_search_by_key(&t, |r| r.timestamp)
        .map_err(|_| MarketDataError::UnknownTimestamp(t))?;
    if idx < WINDOW {
        return Err(MarketDataError::InsufficientHistory { t, available: idx });
    }
    let mut data = vec![0.0; WINDOW * FEATURES];
    for (k, rec) in records[idx + 1 - WINDOW..=idx].iter().enumerate() {
        scale_record(rec, meta, &mut data[k * FEATURES..(k + 1) * FEATURES]);
    }
    Ok(ObservationTensor { data })
}

/// Every second of a day scaled once, so windows can be cut without rescaling.
#[derive(Debug, Clone)]
pub struct ScaledDay {
    first_timestamp: i64,
    rows: Vec<f64>,
}

impl ScaledDay {
    pub fn new(records: &[TickRecord], meta: &TickerMeta) -> ScaledDay {
        let mut rows = vec![0.0; records.len() * FEATURES];
        for (rec, out) in records.iter().zip(rows.chunks_exact_mut(FEATURES)) {
            scale_record(rec, meta, out);
        }
        ScaledDay {
            first_timestamp: records.first().map_or(0, |r| r.timestamp),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len() / FEATURES
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn timestamp(&self, idx: usize) -> i64 {
        self.first_timestamp + idx as i64
    }

    /// Rows `idx-119 ..= idx` as a flat slice.
    pub fn window_slice(&self, idx: usize) -> Result<&[f64], MarketDataError> {
        if idx < WINDOW || idx >= self.len() {
            return Err(MarketDataError::InsufficientHistory {
                t: self.timestamp(idx),
                available: idx.min(self.len()),
            });
        }
        Ok(&self.rows[(idx + 1 - WINDOW) * FEATURES..(idx + 1) * FEATURES])
    }

    pub fn window(&self, idx: usize) -> Result<ObservationTensor, MarketDataError> {
        Ok(ObservationTensor::from_rows(self.window_slice(idx)?.to_vec()))
    }
}

/// The three network inputs cut from one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsViews {
    /// Ask side, shape [12, 10, 10, 2]: sub-window, second, level, (price, amount).
    pub ask: Tensor,
    /// Bid side, same layout as `ask`.
    pub bid: Tensor,
    /// Trade-flow columns 40..=50, shape [120, 11].
    pub trade: Tensor,
}

/// Network-side centering of a window: price columns become percent points
/// above or below the current last price, share columns are taken relative
/// to their own window mean. Keeps the day's gap level and the free-float
/// offset out of the network input.
pub fn center_window(window: &[f64]) -> Vec<f64> {
    debug_assert_eq!(window.len(), WINDOW * FEATURES);
    let now = window[(WINDOW - 1) * FEATURES + COL_LAST];
    let mut mean = [0.0; FEATURES];
    for row in window.chunks_exact(FEATURES) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / WINDOW as f64;
        }
    }
    let mut out = window.to_vec();
    for row in out.chunks_exact_mut(FEATURES) {
        for (c, v) in row.iter_mut().enumerate() {
            *v -= if is_price_column(c) { now } else { mean[c] };
        }
    }
    out
}

/// Views of the centered window, as fed to the networks.
pub fn centered_views(obs: &ObservationTensor) -> ObsViews {
    split_window(&center_window(obs.as_slice()))
}

pub fn split_views(obs: &ObservationTensor) -> ObsViews {
    split_window(obs.as_slice())
}

pub(crate) fn split_window(window: &[f64]) -> ObsViews {
    debug_assert_eq!(window.len(), WINDOW * FEATURES);
    let book_shape = vec![SUB_WINDOWS, SUB_WINDOW_LEN, LEVELS, 2];
    let mut ask = Vec::with_capacity(WINDOW * LEVELS * 2);
    let mut bid = Vec::with_capacity(WINDOW * LEVELS * 2);
    let mut trade = Vec::with_capacity(WINDOW * TRADE_FEATURES);
    // rows are consumed in order, so (sub-window, second) = (r / 10, r % 10)
    for row in window.chunks_exact(FEATURES) {
        for l in 0..LEVELS {
            ask.push(row[COL_ASK_PRICE + l]);
            ask.push(row[COL_ASK_AMOUNT + l]);
            bid.push(row[COL_BID_PRICE + l]);
            bid.push(row[COL_BID_AMOUNT + l]);
        }
        trade.extend_from_slice(&row[COL_LAST..]);
    }
    ObsViews {
        ask: Tensor::from_vec(book_shape.clone(), ask),
        bid: Tensor::from_vec(book_shape, bid),
        trade: Tensor::from_vec(vec![WINDOW, TRADE_FEATURES], trade),
    }
}
