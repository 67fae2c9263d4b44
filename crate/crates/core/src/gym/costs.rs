use serde::{Deserialize, Serialize};

/// How transaction costs come off a round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// One lump deduction of `tax + fee` percentage points.
    Flat,
    /// Half the fee on each leg, tax on the sell leg, each scaled by its notional.
    PerLeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub tax_pct: f64,
    pub fee_pct: f64,
    pub mode: CostMode,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            tax_pct: 0.30,
            fee_pct: 0.03,
            mode: CostMode::Flat,
        }
    }
}

impl CostModel {
    pub fn zero() -> CostModel {
        CostModel {
            tax_pct: 0.0,
            fee_pct: 0.0,
            mode: CostMode::Flat,
        }
    }

    /// Round-trip cost in percentage points. `0.30 + 0.03` is not `0.33` in
    /// binary, so the sum is snapped to nine decimals.
    pub fn round_trip_pct(&self) -> f64 {
        ((self.tax_pct + self.fee_pct) * 1e9).round() / 1e9
    }

    /// Net percent return for a trade bought at `p_buy` and sold at `p_sell`.
    pub fn net(&self, gross: f64, p_buy: f64, p_sell: f64) -> f64 {
        match self.mode {
            CostMode::Flat => apply_costs(gross, self),
            CostMode::PerLeg => {
                let buy_leg = self.fee_pct / 2.0;
                let sell_leg = self.tax_pct + self.fee_pct / 2.0;
                gross - buy_leg - sell_leg * p_sell / p_buy
            }
        }
    }
}

/// Flat deduction of the round-trip cost from a percent return.
pub fn apply_costs(gross: f64, model: &CostModel) -> f64 {
    gross - model.round_trip_pct()
}
