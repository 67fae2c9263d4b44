use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CostMode, CostModel};
use crate::kv::{ConfigError, KvMap};

/// Which quote an order executes against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// Both legs at the last traded price.
    Last,
    /// Buy at the best ask, sell at the best bid.
    Quote,
}

impl FromStr for FillMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "last" => Ok(FillMode::Last),
            "quote" => Ok(FillMode::Quote),
            other => Err(format!("expected last or quote, got {other}")),
        }
    }
}

impl fmt::Display for FillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FillMode::Last => "last",
            FillMode::Quote => "quote",
        })
    }
}

impl FromStr for CostMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flat" => Ok(CostMode::Flat),
            "per_leg" => Ok(CostMode::PerLeg),
            other => Err(format!("expected flat or per_leg, got {other}")),
        }
    }
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMode::Flat => "flat",
            CostMode::PerLeg => "per_leg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Seconds after the buy signal at which every open step is forced.
    pub deadline_s: usize,
    pub cost: CostModel,
    pub fill: FillMode,
    /// Multiplies the buy-order reward; -1 rewards buying near the low.
    pub boa_reward_sign: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            deadline_s: 120,
            cost: CostModel::default(),
            fill: FillMode::Last,
            boa_reward_sign: 1.0,
        }
    }
}

impl EnvConfig {
    /// Consumes the environment keys from `kv`, leaving the rest.
    pub fn from_kv(kv: &mut KvMap) -> Result<EnvConfig, ConfigError> {
        let d = EnvConfig::default();
        let cfg = EnvConfig {
            deadline_s: kv.take_or("deadline_s", d.deadline_s)?,
            cost: CostModel {
                tax_pct: kv.take_or("tax_pct", d.cost.tax_pct)?,
                fee_pct: kv.take_or("fee_pct", d.cost.fee_pct)?,
                mode: kv.take_or("cost_mode", d.cost.mode)?,
            },
            fill: kv.take_or("fill", d.fill)?,
            boa_reward_sign: kv.take_or("boa_reward_sign", d.boa_reward_sign)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<EnvConfig, ConfigError> {
        let mut kv = KvMap::parse(text)?;
        let cfg = EnvConfig::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.deadline_s == 0 {
            return Err(ConfigError::Invalid("deadline_s must be positive".into()));
        }
        if self.boa_reward_sign != 1.0 && self.boa_reward_sign != -1.0 {
            return Err(ConfigError::Invalid("boa_reward_sign must be +1 or -1".into()));
        }
        let c = &self.cost;
        if !(c.tax_pct.is_finite() && c.fee_pct.is_finite() && c.tax_pct >= 0.0 && c.fee_pct >= 0.0) {
            return Err(ConfigError::Invalid("costs must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "deadline_s={}\ntax_pct={}\nfee_pct={}\ncost_mode={}\nfill={}\nboa_reward_sign={:+}\n",
            self.deadline_s, self.cost.tax_pct, self.cost.fee_pct, self.cost.mode, self.fill, self.boa_reward_sign
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        assert_eq!(EnvConfig::parse("").unwrap(), EnvConfig::default());
        let cfg = EnvConfig::parse("deadline_s=60\nfill=quote\nboa_reward_sign=-1\ncost_mode=per_leg").unwrap();
        assert_eq!(cfg.deadline_s, 60);
        assert_eq!(cfg.fill, FillMode::Quote);
        assert_eq!(cfg.boa_reward_sign, -1.0);
        assert_eq!(cfg.cost.mode, CostMode::PerLeg);
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = EnvConfig {
            deadline_s: 30,
            boa_reward_sign: -1.0,
            fill: FillMode::Quote,
            ..EnvConfig::default()
        };
        assert_eq!(EnvConfig::parse(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(EnvConfig::parse("fill=mid").is_err());
        assert!(EnvConfig::parse("boa_reward_sign=2").is_err());
        assert!(EnvConfig::parse("deadline_s=0").is_err());
        assert!(EnvConfig::parse("tax_pct=-1").is_err());
        assert!(matches!(EnvConfig::parse("speed=3"), Err(ConfigError::UnknownKey(_))));
    }
}
