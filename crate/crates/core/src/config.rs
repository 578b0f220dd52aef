//! JSON run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::covariance::{SpectroscopyConfig, DEFAULT_COMMON_NOISE};
use crate::error::{check, InvalidField};
use crate::frames::{FrameGeometry, PsfModel};
use crate::holography::{SpotTarget, WgsOptions};
use crate::rateq::{RateModel, SccSetup, EXPERIMENT_SITES, EXPERIMENT_TOTAL_POWER};
use crate::site::NVSite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Charge,
    Scc,
    Odmr,
    Rabi,
    T1,
    Driven,
    Spectroscopy,
    SccOpt,
    MultiplexScaling,
    WgsBench,
    Holo,
    Baseline,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Charge => "charge",
            Self::Scc => "scc",
            Self::Odmr => "odmr",
            Self::Rabi => "rabi",
            Self::T1 => "t1",
            Self::Driven => "driven",
            Self::Spectroscopy => "spectroscopy",
            Self::SccOpt => "scc_opt",
            Self::MultiplexScaling => "multiplex_scaling",
            Self::WgsBench => "wgs_bench",
            Self::Holo => "holo",
            Self::Baseline => "baseline",
        }
    }

    /// Kinds that render camera frames.
    pub fn renders_frames(self) -> bool {
        matches!(
            self,
            Self::Charge | Self::Scc | Self::Odmr | Self::Rabi | Self::T1 | Self::Driven | Self::Spectroscopy
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub width: usize,
    pub height: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { width: 64, height: 64 }
    }
}

impl From<GeometryConfig> for FrameGeometry {
    fn from(g: GeometryConfig) -> Self {
        FrameGeometry {
            width: g.width,
            height: g.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub n_sites: usize,
    pub n_shots: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_sites: 15,
            n_shots: 300_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoloConfig {
    pub width: usize,
    pub height: usize,
    /// Used when `targets` is absent.
    pub n_targets: usize,
    pub min_separation: f64,
    pub targets: Option<Vec<SpotTarget>>,
    pub write_png: bool,
}

impl Default for HoloConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            n_targets: 15,
            min_separation: 12.0,
            targets: None,
            write_png: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sites: Vec<NVSite>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub camera: CameraModel,
    #[serde(default)]
    pub psf: PsfModel,
    /// Frames per sweep point for frame experiments, shots per sweep point
    /// for shot-level simulations.
    #[serde(default = "default_repetitions")]
    pub repetitions: u64,
    /// Sweep values; units depend on the experiment (Hz, s, rad, or site counts).
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub spectroscopy: SpectroscopyConfig,
    #[serde(default = "default_common_noise")]
    pub common_noise: f64,
    /// Scalar baseline; when absent a null calibration is run first.
    #[serde(default)]
    pub baseline: Option<f64>,
    #[serde(default)]
    pub baseline_stderr: f64,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub rate_model: RateModel,
    #[serde(default)]
    pub scc_setup: SccSetup,
    /// W, shared by all spots.
    #[serde(default = "default_total_power")]
    pub total_power: f64,
    /// Spots sharing `total_power` for scc_opt.
    #[serde(default = "default_spots")]
    pub n_spots: usize,
    #[serde(default)]
    pub wgs: WgsOptions,
    #[serde(default)]
    pub holo: HoloConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_repetitions() -> u64 {
    1000
}
fn default_common_noise() -> f64 {
    DEFAULT_COMMON_NOISE
}
fn default_total_power() -> f64 {
    EXPERIMENT_TOTAL_POWER
}
fn default_spots() -> usize {
    EXPERIMENT_SITES
}

impl RunConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        serde_json::from_value(serde_json::json!({ "experiment": experiment })).expect("defaults deserialize")
    }

    pub fn validate(&self) -> Result<(), InvalidField> {
        for s in &self.sites {
            s.validate().map_err(|e| InvalidField::new(format!("sites[{}].{}", s.id, e.field), e.reason))?;
        }
        let mut ids: Vec<u32> = self.sites.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        check(ids.windows(2).all(|w| w[0] != w[1]), "sites", || "site ids must be unique".into())?;
        self.camera.validate()?;
        self.psf.validate()?;
        check(self.geometry.width > 0 && self.geometry.height > 0, "geometry", || "must be non-empty".into())?;
        check(self.repetitions >= 1, "repetitions", || "must be at least 1".into())?;
        if let Some(s) = &self.sweep {
            check(!s.is_empty(), "sweep", || "must not be empty".into())?;
            check(s.iter().all(|v| v.is_finite()), "sweep", || "values must be finite".into())?;
        }
        check(self.common_noise >= 0.0, "common_noise", || "must be non-negative".into())?;
        check(self.baseline_stderr >= 0.0, "baseline_stderr", || "must be non-negative".into())?;
        self.rate_model.validate()?;
        self.scc_setup.validate()?;
        check(self.total_power > 0.0, "total_power", || "must be positive".into())?;
        check(self.n_spots >= 1, "n_spots", || "must be at least 1".into())?;
        if self.experiment.renders_frames() {
            check(!self.sites.is_empty(), "sites", || {
                format!("experiment {} needs at least one site", self.experiment.name())
            })?;
        }
        if matches!(self.experiment, ExperimentKind::Driven | ExperimentKind::Spectroscopy) {
            check(self.sites.len() >= 2, "sites", || "correlation experiments need at least 2 sites".into())?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: InvalidField },
}

pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate().map_err(|source| ConfigError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}
