//! JSON description of a solver run.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::GridSpec;
use crate::heis::HPoint;
use crate::io::read_vtk;

use super::{InnerBoundary, OuterBc, PLapError, PLapProblem, SolveOptions, DEFAULT_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InnerConfig {
    KoranyiBall {
        #[serde(default)]
        center: HPoint,
        radius: f64,
    },
    /// Level-set field stored as a legacy-VTK file on the solver grid.
    FieldFile { path: PathBuf },
}

fn default_tol() -> f64 {
    SolveOptions::default().tol
}

fn default_max_iters() -> usize {
    SolveOptions::default().max_iters
}

/// `{p, eps, tol, max_iters, grid: {lo, hi, n}, inner: {...}, outer: {mode, ...}}`.
/// `eps` defaults to `1e-6` times the largest outer data magnitude (at
/// least one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PLapConfig {
    pub p: f64,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub grid: GridSpec,
    pub inner: InnerConfig,
    pub outer: OuterBc,
}

impl PLapConfig {
    pub fn from_json(text: &str) -> Result<Self, PLapError> {
        serde_json::from_str(text).map_err(|e| PLapError::config("config", e.to_string()))
    }

    pub fn options(&self) -> Result<SolveOptions, PLapError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(PLapError::config("tol", "must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(PLapError::config("max_iters", "must be positive"));
        }
        Ok(SolveOptions::new(self.tol, self.max_iters))
    }

    /// Builds the problem; relative field paths are resolved against `base`.
    pub fn problem(&self, base: &Path) -> Result<PLapProblem, PLapError> {
        self.grid.validate()?;
        let inner = match &self.inner {
            InnerConfig::KoranyiBall { center, radius } => {
                InnerBoundary::KoranyiBall { center: *center, radius: *radius }
            }
            InnerConfig::FieldFile { path } => {
                let full = base.join(path);
                let file = File::open(&full).map_err(|e| PLapError::config("inner.path", e.to_string()))?;
                let field = read_vtk(BufReader::new(file)).map_err(|e| PLapError::config("inner.path", e.to_string()))?;
                InnerBoundary::Field { field }
            }
        };
        let eps = match self.eps {
            Some(e) => e,
            None => {
                let s = &self.grid;
                let scale = (0..s.len())
                    .filter(|&i| s.on_face(i))
                    .map(|i| self.outer.value(s.point(i), self.p).abs())
                    .fold(1.0f64, f64::max);
                DEFAULT_EPS * scale
            }
        };
        let prob = PLapProblem { p: self.p, eps, spec: self.grid, inner, outer: self.outer };
        prob.validate()?;
        Ok(prob)
    }
}
