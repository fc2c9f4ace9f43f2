//! Experiment configuration: JSON with unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::gradient::Target;
use crate::grid::SpatialGrid;
use crate::model::{ModelSpec, SdeModel};
use crate::semigroup::{AdjointMode, GridBackend};
use crate::signature::Schedule;
use crate::ufg::{MultiIndex, ScalarField};

/// Spatial and temporal resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Half width `L` of `[-L, L]^N`.
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    /// Points per axis.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_half_width() -> f64 {
    4.0
}
fn default_n() -> usize {
    101
}
fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    0.5
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { half_width: default_half_width(), n: default_n(), dt: default_dt(), horizon: default_horizon() }
    }
}

impl GridSpec {
    /// Number of time steps; `horizon / dt` must be an integer.
    pub fn steps(&self) -> Result<usize> {
        let r = self.horizon / self.dt;
        let k = r.round();
        if !(self.dt > 0.0 && self.horizon > 0.0) || (r - k).abs() > 1e-6 * r.max(1.0) {
            return Err(config_error("grid", format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt)));
        }
        Ok(k as usize)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    #[default]
    Grid,
    MonteCarlo,
}

/// Where the observation path comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationSource {
    /// Simulated from the model itself.
    #[default]
    Model,
    /// A standard Brownian path, independent of the model.
    Brownian,
}

/// Test function `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFn {
    /// First coordinate.
    Identity,
    One,
    /// `exp(-|x|² / (2 w²))`.
    Gaussian {
        #[serde(default = "one")]
        width: f64,
    },
    /// `tanh(x_1 / ε)`, a smoothed step.
    Step {
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Cosine {
        #[serde(default = "one")]
        frequency: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    0.003
}

impl Default for TestFn {
    fn default() -> Self {
        TestFn::Gaussian { width: 1.0 }
    }
}

impl TestFn {
    pub fn field(&self, dim: usize) -> ScalarField {
        match *self {
            TestFn::Identity => ScalarField::from_value(dim, |x| x[0]),
            TestFn::One => ScalarField::constant(dim, 1.0),
            TestFn::Gaussian { width } => ScalarField::from_value(dim, move |x| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * width * width)).exp()),
            TestFn::Step { eps } => ScalarField::from_value(dim, move |x| (x[0] / eps).tanh()),
            TestFn::Cosine { frequency } => ScalarField::from_value(dim, move |x| (frequency * x[0]).cos()),
        }
    }
}

/// Experiment-specific settings; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Knobs {
    /// Truncation level of the series, or the top pathwise level.
    pub levels: usize,
    pub gamma: f64,
    /// Times for the gradient fits; dyadic from 0.1 when absent.
    pub times: Option<Vec<f64>>,
    pub n_paths: usize,
    pub n_particles: usize,
    pub islands: usize,
    /// Number of observation paths.
    pub y_paths: usize,
    pub observation: ObservationSource,
    /// Observation channels for model-free Brownian paths.
    pub channels: Option<usize>,
    /// Word length for signature checks.
    pub depth: usize,
    pub triples: usize,
    pub cases: usize,
    pub test_function: TestFn,
    pub alpha: MultiIndex,
    pub beta: MultiIndex,
    pub target: Target,
    pub adjoint_mode: AdjointMode,
    pub schedules: Vec<Schedule>,
    /// Also fit the operator-norm scaling in `expand`.
    pub decay: bool,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            levels: 3,
            gamma: 0.4,
            times: None,
            n_paths: 10_000,
            n_particles: 10_000,
            islands: 20,
            y_paths: 1,
            observation: ObservationSource::Model,
            channels: None,
            depth: 4,
            triples: 50,
            cases: 1000,
            test_function: TestFn::default(),
            alpha: MultiIndex::empty(),
            beta: MultiIndex::empty(),
            target: Target::Heat,
            adjoint_mode: AdjointMode::Transpose,
            schedules: vec![Schedule::Dyadic, Schedule::Greedy],
            decay: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default)]
    pub seed: u64,
    /// Starting point; the origin when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub knobs: Knobs,
}

fn config_error(path: &str, message: impl Into<String>) -> LabError {
    LabError::Config { path: path.to_string(), message: message.into() }
}

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 3] = ["linear-gaussian", "cubic-sensor", "bm-1d"];

impl ExperimentConfig {
    /// Default configuration around a bundled model.
    pub fn preset(name: &str) -> Result<Self> {
        let model = match name {
            "linear-gaussian" => ModelSpec::LinearGaussian { a: 1.0, sigma: 1.0, gain: 1.0 },
            "cubic-sensor" => ModelSpec::CubicSensor { a: 1.0, sigma: 1.0, gain: 1.0 },
            "bm-1d" => ModelSpec::Bm1d { gain: 0.0 },
            other => return Err(config_error("model", format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        };
        Ok(ExperimentConfig { model, grid: GridSpec::default(), backend: BackendChoice::Grid, seed: 0, x0: None, knobs: Knobs::default() })
    }

    /// Parses and validates JSON. A run manifest is accepted too; its embedded config is used.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| config_error(".", e.to_string()))?;
        let value = match value {
            serde_json::Value::Object(ref m) if m.contains_key("manifest_version") => {
                m.get("config").cloned().ok_or_else(|| config_error("config", "manifest has no embedded config"))?
            }
            v => v,
        };
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            config_error(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model.build().map_err(|e| config_error("model", e.to_string()))?;
        if self.grid.n < 5 {
            return Err(config_error("grid.n", "need at least 5 points"));
        }
        if !(self.grid.half_width > 0.0) {
            return Err(config_error("grid.half_width", "must be positive"));
        }
        self.grid.steps()?;
        if let Some(x0) = &self.x0 {
            if x0.len() != model.dim() {
                return Err(config_error("x0", format!("expected {} coordinates, got {}", model.dim(), x0.len())));
            }
        }
        if self.knobs.y_paths == 0 || self.knobs.n_paths == 0 {
            return Err(config_error("knobs", "path counts must be positive"));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<SdeModel> {
        self.model.build()
    }

    pub fn start(&self, dim: usize) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![0.0; dim])
    }

    pub fn grid_backend(&self) -> Result<GridBackend> {
        let model = self.build_model()?;
        let grid = SpatialGrid::new(model.dim(), self.grid.n, self.grid.half_width)?;
        GridBackend::new(model, grid)
    }

    /// Pretty JSON of the resolved configuration.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
