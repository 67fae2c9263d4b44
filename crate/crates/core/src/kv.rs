//! Flat `key=value` config text. Blank lines and `#` comments are skipped.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Parsed key/value pairs, consumed field by field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<KvMap, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key });
            }
        }
        Ok(KvMap { entries })
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                reason: e.to_string(),
                value: v,
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_keys().next() {
            Some(k) => Err(ConfigError::UnknownKey(k)),
            None => Ok(()),
        }
    }
}
