//! Model hyperparameters and the flat `key = value` config format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the decay reference time is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TRefMode {
    /// Fixed to the last timestamp of the dataset. Every stored weight shares
    /// one reference, so the per-event delta is exact.
    DatasetMax,
    /// Tracks the newest ingested timestamp.
    StreamMax,
}

impl fmt::Display for TRefMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TRefMode::DatasetMax => "dataset_max",
            TRefMode::StreamMax => "stream_max",
        })
    }
}

impl FromStr for TRefMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset_max" => Ok(TRefMode::DatasetMax),
            "stream_max" => Ok(TRefMode::StreamMax),
            other => Err(Error::Config(format!("unknown t_ref_mode '{other}'"))),
        }
    }
}

/// Similarity used to rank explanation items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Inner,
    Cosine,
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Inner => "inner",
            Similarity::Cosine => "cosine",
        })
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inner" => Ok(Similarity::Inner),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(Error::Config(format!("unknown similarity '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Factor rank.
    pub k: usize,
    /// Time-decay coefficient of the interaction matrix.
    pub beta_t: f64,
    /// Interval coefficient of the transition weights.
    pub beta_i: f64,
    /// Share of the sequential score against the co-occurrence score.
    pub lambda_s: f64,
    /// Share of the transition score.
    pub lambda_t: f64,
    pub t_ref_mode: TRefMode,
    pub exclude_seen: bool,
    pub guard_eps: f64,
    /// Rebuild the factorization from scratch every this many events (0 = never).
    pub rebuild_interval: u64,
    /// Use `exp(-beta_i * gap / t_ref)` instead of the growing form.
    pub negate_interval: bool,
    /// Keep at most this many recent history entries per user (0 = unbounded).
    pub history_cap: usize,
    pub explain_similarity: Similarity,
    /// Extra user/item rows reserved for ids first seen by the live service.
    pub spare_users: usize,
    pub spare_items: usize,
    /// Log long/short-term interest vectors on every ingested event.
    pub trajectory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 64,
            beta_t: 0.0,
            beta_i: 0.0,
            lambda_s: 0.0,
            lambda_t: 0.0,
            t_ref_mode: TRefMode::DatasetMax,
            exclude_seen: true,
            guard_eps: 1e-12,
            rebuild_interval: 0,
            negate_interval: false,
            history_cap: 0,
            explain_similarity: Similarity::Inner,
            spare_users: 0,
            spare_items: 0,
            trajectory: false,
        }
    }
}

const KEYS: &[&str] = &[
    "k",
    "beta_t",
    "beta_i",
    "lambda_s",
    "lambda_t",
    "t_ref_mode",
    "exclude_seen",
    "guard_eps",
    "rebuild_interval",
    "negate_interval",
    "history_cap",
    "explain_similarity",
    "spare_users",
    "spare_items",
    "trajectory",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_t", self.lambda_t)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("beta_t", self.beta_t), ("beta_i", self.beta_i)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.guard_eps > 0.0) {
            return Err(Error::Config("guard_eps must be positive".into()));
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "k" => self.k = parse_value(key, value)?,
            "beta_t" => self.beta_t = parse_value(key, value)?,
            "beta_i" => self.beta_i = parse_value(key, value)?,
            "lambda_s" => self.lambda_s = parse_value(key, value)?,
            "lambda_t" => self.lambda_t = parse_value(key, value)?,
            "t_ref_mode" => self.t_ref_mode = value.parse()?,
            "exclude_seen" => self.exclude_seen = parse_value(key, value)?,
            "guard_eps" => self.guard_eps = parse_value(key, value)?,
            "rebuild_interval" => self.rebuild_interval = parse_value(key, value)?,
            "negate_interval" => self.negate_interval = parse_value(key, value)?,
            "history_cap" => self.history_cap = parse_value(key, value)?,
            "explain_similarity" => self.explain_similarity = value.parse()?,
            "spare_users" => self.spare_users = parse_value(key, value)?,
            "spare_items" => self.spare_items = parse_value(key, value)?,
            "trajectory" => self.trajectory = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(key, value)
    }

    /// Parses the flat config format on top of the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = ModelConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            config.set(key, value).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    fn value_text(&self, key: &str) -> String {
        match key {
            "k" => self.k.to_string(),
            "beta_t" => self.beta_t.to_string(),
            "beta_i" => self.beta_i.to_string(),
            "lambda_s" => self.lambda_s.to_string(),
            "lambda_t" => self.lambda_t.to_string(),
            "t_ref_mode" => self.t_ref_mode.to_string(),
            "exclude_seen" => self.exclude_seen.to_string(),
            "guard_eps" => format!("{:e}", self.guard_eps),
            "rebuild_interval" => self.rebuild_interval.to_string(),
            "negate_interval" => self.negate_interval.to_string(),
            "history_cap" => self.history_cap.to_string(),
            "explain_similarity" => self.explain_similarity.to_string(),
            "spare_users" => self.spare_users.to_string(),
            "spare_items" => self.spare_items.to_string(),
            "trajectory" => self.trajectory.to_string(),
            _ => unreachable!("unknown config key {key}"),
        }
    }

    /// Serializes every field in a fixed key order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|key| format!("{key} = {}\n", self.value_text(key)))
            .collect()
    }
}
