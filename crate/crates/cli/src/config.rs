//! Run configuration documents and their validation.

use std::path::PathBuf;

use himcf::grid::{GridError, GridSpec};
use himcf::heis::HPoint;
use himcf::plap::{PLapConfig, PLapError};
use serde::{Deserialize, Serialize};

/// A configuration problem, reported with exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &str, reason: impl Into<String>) -> Self {
        Self { field: field.to_string(), reason: reason.into() }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration field `{}`: {}", self.field, self.reason)
    }
}

impl From<GridError> for ConfigError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::InvalidSpec { field, reason } => Self { field, reason },
            other => Self::new("grid", other.to_string()),
        }
    }
}

impl From<PLapError> for ConfigError {
    fn from(e: PLapError) -> Self {
        match e {
            PLapError::Config { field, reason } => Self { field, reason },
            PLapError::Grid(g) => g.into(),
            other => Self::new("plap", other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeCount {
    Uniform(usize),
    PerAxis([usize; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub n: NodeCount,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec, ConfigError> {
        let n = match self.n {
            NodeCount::Uniform(n) => [n; 3],
            NodeCount::PerAxis(n) => n,
        };
        Ok(GridSpec::new(self.lo, self.hi, n)?)
    }
}

/// A Korányi ball `B_r(center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallConfig {
    #[serde(default)]
    pub center: HPoint,
    pub radius: f64,
}

/// One JSON document per run. Every field is optional; commands fall back
/// to their documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<String>,
    pub grid: Option<GridConfig>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Random points for `exact-verify`.
    pub samples: Option<usize>,
    /// Full solver description for `plap-solve`.
    pub plap: Option<PLapConfig>,
    /// Initial ball for `himcf`.
    pub initial: Option<BallConfig>,
    pub schedule: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    /// Level for `identities` and `hull-probe`.
    pub level: Option<f64>,
    /// Components of the set probed by `hull-probe`.
    pub balls: Option<Vec<BallConfig>>,
    pub probes: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))
    }

    pub fn grid_or(&self, lo: [f64; 3], hi: [f64; 3], n: usize) -> Result<GridSpec, ConfigError> {
        match &self.grid {
            Some(g) => g.spec(),
            None => Ok(GridSpec::uniform(lo, hi, n)?),
        }
    }

    pub fn t_grid_or_default(&self) -> Result<Vec<f64>, ConfigError> {
        let t = self.t_grid.clone().unwrap_or_else(|| (0..10).map(|k| 0.05 + 0.05 * k as f64).collect());
        if t.len() < 2 {
            return Err(ConfigError::new("t_grid", "needs at least two levels"));
        }
        if t.iter().any(|v| !v.is_finite()) || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ConfigError::new("t_grid", "levels must be finite and strictly increasing"));
        }
        Ok(t)
    }

    pub fn tol_or(&self, default: f64) -> Result<f64, ConfigError> {
        let tol = self.tol.unwrap_or(default);
        if !(tol > 0.0 && tol < 1.0) {
            return Err(ConfigError::new("tol", "must lie in (0, 1)"));
        }
        Ok(tol)
    }

    pub fn level(&self) -> Result<f64, ConfigError> {
        let t = self.level.unwrap_or(0.0);
        if !t.is_finite() {
            return Err(ConfigError::new("level", "must be finite"));
        }
        Ok(t)
    }
}

pub fn check_ball(b: &BallConfig, field: &str) -> Result<(), ConfigError> {
    if !b.center.is_finite() {
        return Err(ConfigError::new(&format!("{field}.center"), "must be finite"));
    }
    if !(b.radius > 0.0 && b.radius.is_finite()) {
        return Err(ConfigError::new(&format!("{field}.radius"), "must be positive"));
    }
    Ok(())
}
