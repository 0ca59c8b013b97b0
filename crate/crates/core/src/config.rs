//! Simulation configuration and its `key = value` file format.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::Profits;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentWindow {
    Cumulative,
}

/// Every knob of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub proxies: usize,
    pub nov: usize,
    /// MB/s per link.
    pub link_capacity: u32,
    pub class_mix: [f64; 3],
    pub tier_mix: [f64; 3],
    /// Requests per second over the whole system.
    pub total_arrival_rate: f64,
    pub horizon: f64,
    pub seed: u64,
    pub agent_period: f64,
    pub agent_window: AgentWindow,
    pub sample_period: f64,
    /// Inclusive video size range in MB.
    pub video_size_range: (u32, u32),
    pub cache_capacity: usize,
    /// Videos per tier placed at each proxy before the run.
    pub initial_placement: [usize; 3],
    pub psg_enabled: bool,
    pub profits: Profits,
    /// Re-check every link after every event, not only the links it touched.
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            proxies: 6,
            nov: 480,
            link_capacity: 300,
            class_mix: [0.20, 0.30, 0.50],
            tier_mix: [0.50, 0.35, 0.15],
            total_arrival_rate: 3.0,
            horizon: 10_000.0,
            seed: 1,
            agent_period: 100.0,
            agent_window: AgentWindow::Cumulative,
            sample_period: 10.0,
            video_size_range: (700, 2100),
            cache_capacity: 160,
            initial_placement: [40, 40, 80],
            psg_enabled: true,
            profits: Profits::default(),
            check_invariants: false,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| bad(key, format!("`{value}`: {e}")))
}

fn parse_triple<T: std::str::FromStr + Copy + Default>(key: &str, value: &str) -> Result<[T; 3], ConfigError>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        return Err(bad(key, format!("expected three comma-separated values, got `{value}`")));
    }
    let mut out = [T::default(); 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = parse_one(key, part)?;
    }
    Ok(out)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(bad(key, format!("`{other}` is not a boolean"))),
    }
}

impl SimConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "proxies" => self.proxies = parse_one(key, value)?,
            "nov" => self.nov = parse_one(key, value)?,
            "link_capacity" => self.link_capacity = parse_one(key, value)?,
            "class_mix" => self.class_mix = parse_triple(key, value)?,
            "tier_mix" => self.tier_mix = parse_triple(key, value)?,
            "total_arrival_rate" => self.total_arrival_rate = parse_one(key, value)?,
            "horizon" => self.horizon = parse_one(key, value)?,
            "seed" => self.seed = parse_one(key, value)?,
            "agent_period" => self.agent_period = parse_one(key, value)?,
            "agent_window" => {
                self.agent_window = match value.trim() {
                    "cumulative" => AgentWindow::Cumulative,
                    "reset" => return Err(bad(key, "windowed counts are not supported")),
                    other => return Err(bad(key, format!("unknown window `{other}`"))),
                }
            }
            "sample_period" => self.sample_period = parse_one(key, value)?,
            "video_size_range" => {
                let (lo, hi) = value
                    .split_once(',')
                    .ok_or_else(|| bad(key, "expected `min,max`"))?;
                self.video_size_range = (parse_one(key, lo)?, parse_one(key, hi)?);
            }
            "cache_capacity" => self.cache_capacity = parse_one(key, value)?,
            "initial_placement" => self.initial_placement = parse_triple(key, value)?,
            "psg_enabled" => self.psg_enabled = parse_bool(key, value)?,
            "profits" => {
                let p: [u64; 3] = parse_triple(key, value)?;
                self.profits = Profits::new(p).map_err(|e| bad(key, e.to_string()))?;
            }
            "check_invariants" => self.check_invariants = parse_bool(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SimConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.proxies == 0 {
            return invalid("proxies must be at least 1".into());
        }
        if self.nov == 0 || !self.nov.is_multiple_of(4) {
            return invalid(format!("nov = {} is not a positive multiple of 4", self.nov));
        }
        if self.link_capacity == 0 {
            return invalid("link_capacity must be positive".into());
        }
        for (name, mix) in [("class_mix", self.class_mix), ("tier_mix", self.tier_mix)] {
            if mix.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return invalid(format!("{name} must be three probabilities summing to 1"));
            }
        }
        if !self.total_arrival_rate.is_finite() || self.total_arrival_rate < 0.0 {
            return invalid("total_arrival_rate must be finite and non-negative".into());
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return invalid("horizon must be positive".into());
        }
        if !(self.agent_period > 0.0) {
            return invalid("agent_period must be positive".into());
        }
        if !(self.sample_period > 0.0) {
            return invalid("sample_period must be positive".into());
        }
        let (lo, hi) = self.video_size_range;
        if lo == 0 || lo > hi {
            return invalid(format!("video_size_range {lo},{hi} must satisfy 0 < min <= max"));
        }
        for (i, &n) in self.initial_placement.iter().enumerate() {
            let tier_size = if i < 2 { self.nov / 4 } else { self.nov / 2 };
            if n > tier_size {
                return invalid(format!("initial_placement[{i}] = {n} exceeds the tier size {tier_size}"));
            }
        }
        if self.initial_placement.iter().sum::<usize>() > self.cache_capacity {
            return invalid("initial placement does not fit in cache_capacity".into());
        }
        Ok(())
    }

    /// The same configuration with neighbour sharing turned off.
    pub fn without_psg(&self) -> Self {
        SimConfig {
            psg_enabled: false,
            ..self.clone()
        }
    }
}
