use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot schedule an event at t={at} s: clock is already at {now} s")]
    ScheduleInPast { at: f64, now: f64 },
    #[error("distance {distance} m is below the reference distance {ref_distance} m")]
    BelowReferenceDistance { distance: f64, ref_distance: f64 },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("metrics ledger violates conservation: {0}")]
    Conservation(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<ConfigError>,
    },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub(crate) fn invalid(key: &str, value: &str, reason: impl Into<String>) -> Self {
        ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.into(),
        }
    }
}
