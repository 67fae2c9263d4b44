use super::{MarketDataError, TickerMeta};

/// Percent change of `price` against the previous close.
pub fn scale_price(price: f64, prev_close: f64) -> Result<f64, MarketDataError> {
    if !(prev_close > 0.0) {
        return Err(MarketDataError::NonPositiveBase(prev_close));
    }
    Ok(pct_change(price, prev_close))
}

/// Log of a share count relative to the free float. Zero volume is read as one share.
pub fn scale_shares(volume: f64, meta: &TickerMeta) -> Result<f64, MarketDataError> {
    let float = meta.free_float();
    if !(float > 0.0) {
        return Err(MarketDataError::InvalidFloat {
            outstanding: meta.shares_outstanding,
            majority: meta.shares_majority,
        });
    }
    Ok(log_share(volume, float))
}

#[inline]
pub(crate) fn pct_change(price: f64, base: f64) -> f64 {
    (price - base) * 100.0 / base
}

/// Volume substituted for zero before taking the logarithm.
pub const ZERO_VOLUME_SENTINEL: f64 = 1.0;

#[inline]
pub(crate) fn log_share(volume: f64, free_float: f64) -> f64 {
    let v = if volume > 0.0 { volume } else { ZERO_VOLUME_SENTINEL };
    (v / free_float).ln()
}
