use serde::{Deserialize, Serialize};

use crate::error::{check, InvalidField};

/// EMCCD readout model. All intensities are in ADU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    #[serde(default = "default_em_gain")]
    pub em_gain: f64,
    #[serde(default = "default_read_noise")]
    pub read_noise_sigma: f64,
    #[serde(default = "default_bias")]
    pub bias: f64,
    /// Photon-counting threshold; a pixel counts one photon when its raw value is strictly above.
    #[serde(default = "default_t_pc")]
    pub t_pc: f64,
    #[serde(default = "default_roi_n")]
    pub roi_n: usize,
    /// s
    #[serde(default = "default_exposure")]
    pub exposure: f64,
}

fn default_em_gain() -> f64 {
    300.0
}
fn default_read_noise() -> f64 {
    10.0
}
fn default_bias() -> f64 {
    500.0
}
fn default_t_pc() -> f64 {
    550.0
}
fn default_roi_n() -> usize {
    6
}
fn default_exposure() -> f64 {
    8e-3
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            em_gain: default_em_gain(),
            read_noise_sigma: default_read_noise(),
            bias: default_bias(),
            t_pc: default_t_pc(),
            roi_n: default_roi_n(),
            exposure: default_exposure(),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), InvalidField> {
        check(self.em_gain >= 1.0, "em_gain", || format!("{} must be at least 1", self.em_gain))?;
        check(self.read_noise_sigma >= 0.0, "read_noise_sigma", || "must be non-negative".into())?;
        check((0.0..=65535.0).contains(&self.bias), "bias", || "must fit the 16-bit range".into())?;
        check(self.t_pc > self.bias, "t_pc", || {
            format!("threshold {} must exceed bias {}", self.t_pc, self.bias)
        })?;
        check(self.roi_n >= 1, "roi_n", || "must be at least 1".into())?;
        check(self.exposure > 0.0, "exposure", || "must be positive".into())?;
        Ok(())
    }
}
