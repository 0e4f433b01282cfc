//! Experiment configuration, read from sectioned `key = value` TOML.
//!
//! ```toml
//! [model]
//! c1 = 2.0
//! c2 = 1.0
//! q1 = 0.1
//! q2 = 0.2
//! hurst = 0.5
//!
//! [sojourn]
//! mode = "constant"
//! value = 1.0
//!
//! [experiment]
//! u_grid = [4.0, 6.0, 9.0, 12.0]
//!
//! [sim]
//! dt = 0.00390625
//! n_paths = 100000
//! seed = 7
//! tilt = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::GridSpec;
use crate::mc::{default_horizon, Exec, SimSettings, TiltSpec};
use crate::model::{ModelParams, SojournThreshold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub sojourn: SojournThreshold,
    pub experiment: ExperimentSection,
    pub sim: SimSection,
    #[serde(default)]
    pub constants: ConstantsSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Capitals, nonempty and strictly increasing.
    pub u_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    /// Fixed horizon; the default scales with `u`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub n_paths: u64,
    pub seed: u64,
    #[serde(default = "default_chunk")]
    pub chunk_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_pilot")]
    pub pilot_fraction: f64,
    #[serde(default = "default_abandon")]
    pub abandon_log_bound: f64,
    /// Drift tilting (Brownian paths only).
    #[serde(default)]
    pub tilt: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

fn default_chunk() -> u64 {
    Exec::default().chunk_size
}

fn default_pilot() -> f64 {
    0.1
}

fn default_abandon() -> f64 {
    30.0
}

/// Injected constant values, or settings to estimate the missing ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub berman: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub piterbarg: Option<f64>,
    /// Estimate constants that are needed but not injected.
    #[serde(default = "yes")]
    pub estimate: bool,
    #[serde(default = "default_span")]
    pub span: f64,
    #[serde(default = "default_constant_dt")]
    pub dt: f64,
    #[serde(default = "default_constant_n")]
    pub n_paths: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_range: Option<(f64, f64)>,
}

fn yes() -> bool {
    true
}

fn default_span() -> f64 {
    32.0
}

fn default_constant_dt() -> f64 {
    1.0 / 256.0
}

fn default_constant_n() -> u64 {
    10_000
}

impl Default for ConstantsSection {
    fn default() -> Self {
        ConstantsSection {
            berman: None,
            piterbarg: None,
            estimate: true,
            span: default_span(),
            dt: default_constant_dt(),
            n_paths: default_constant_n(),
            z_range: None,
            x_range: None,
        }
    }
}

/// Cells of the exact-vs-simulation check on a single Brownian line
/// `c t + q u` with threshold `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub q: f64,
    #[serde(default = "default_thresholds")]
    pub t_values: Vec<f64>,
    /// Stride of the coarse grid relative to `sim.dt`.
    #[serde(default = "default_coarse")]
    pub coarse_stride: usize,
    /// Leading order of the grid bias, `bias ~ dt^r`.
    #[serde(default = "default_exponent")]
    pub richardson_exponent: f64,
}

fn one() -> f64 {
    1.0
}

fn default_thresholds() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn default_coarse() -> usize {
    2
}

fn default_exponent() -> f64 {
    0.5
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            c: 1.0,
            q: 1.0,
            t_values: default_thresholds(),
            coarse_stride: default_coarse(),
            richardson_exponent: default_exponent(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir() }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let u = &self.experiment.u_grid;
        if u.is_empty() {
            return Err(Error::Config("u_grid must not be empty".into()));
        }
        if u.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config(
                "u_grid entries must be finite and >= 0".into(),
            ));
        }
        if u.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("u_grid must be strictly increasing".into()));
        }
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) || s.n_paths == 0 || s.chunk_size == 0 {
            return Err(Error::Config(
                "sim needs dt > 0, n_paths > 0 and chunk_size > 0".into(),
            ));
        }
        if let Some(h) = s.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("sim.horizon = {h} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&s.pilot_fraction) || !(s.abandon_log_bound > 0.0) {
            return Err(Error::Config(
                "need 0 <= pilot_fraction <= 1 and abandon_log_bound > 0".into(),
            ));
        }
        let c = &self.constants;
        for v in [c.berman, c.piterbarg].into_iter().flatten() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "injected constant {v} must be positive"
                )));
            }
        }
        if !(c.span > 0.0 && c.dt > 0.0) || c.n_paths == 0 {
            return Err(Error::Config(
                "constants need span, dt and n_paths positive".into(),
            ));
        }
        let v = &self.validate;
        if v.coarse_stride < 2
            || !(v.richardson_exponent > 0.0)
            || v.t_values.iter().any(|t| !(*t >= 0.0))
        {
            return Err(Error::Config(
                "validate needs coarse_stride >= 2, richardson_exponent > 0 and t_values >= 0"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        Exec {
            threads: self.sim.threads,
            chunk_size: self.sim.chunk_size,
        }
    }

    /// Simulation settings at capital `u`, with the given seed.
    pub fn sim_settings(&self, u: f64, seed: u64) -> Result<SimSettings> {
        let horizon = self
            .sim
            .horizon
            .unwrap_or_else(|| default_horizon(&self.model, u, &self.sojourn));
        let grid = GridSpec::covering(self.sim.dt, horizon)?;
        let mut s = SimSettings::new(grid, self.sim.n_paths, seed);
        s.exec = self.exec();
        s.pilot_fraction = self.sim.pilot_fraction;
        s.abandon_log_bound = self.sim.abandon_log_bound;
        Ok(s)
    }

    pub fn tilt_spec(&self) -> Option<TiltSpec> {
        self.sim.tilt.then_some(TiltSpec {
            theta: self.sim.theta,
            window: self.sim.window,
        })
    }
}
