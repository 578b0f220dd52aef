//! Emitter description shared by the simulators and analysis pipelines.

use serde::{Deserialize, Serialize};

use crate::error::{check, check_prob, InvalidField};

/// One of the (at most four) crystallographic NV axis classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationFamily {
    A,
    B,
    C,
    D,
}

/// Which spin state a site is prepared in before a correlation sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinPrep {
    #[default]
    Same,
    Opposite,
}

impl SpinPrep {
    pub fn sign(self) -> f64 {
        match self {
            SpinPrep::Same => 1.0,
            SpinPrep::Opposite => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NVSite {
    pub id: u32,
    /// Subpixel (x, y); pixel `i` spans `[i - 0.5, i + 0.5)`.
    pub position: [f64; 2],
    #[serde(default = "default_family")]
    pub orientation_family: OrientationFamily,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    /// s
    #[serde(default = "default_t1")]
    pub t1: f64,
    /// s
    #[serde(default = "default_t2")]
    pub t2_xy8: f64,
    /// Hz
    #[serde(default = "default_rabi")]
    pub rabi_freq: f64,
    #[serde(default = "default_nv_minus")]
    pub nv_minus_init: f64,
    #[serde(default = "default_spin_init")]
    pub spin_init_fidelity: f64,
    /// Detected wide-field photon rate, counts/s.
    #[serde(default = "default_fluorescence_rate")]
    pub fluorescence_rate: f64,
    /// Hz
    #[serde(default = "default_odmr_center")]
    pub odmr_center: f64,
    /// Full width at half maximum, Hz.
    #[serde(default = "default_odmr_linewidth")]
    pub odmr_linewidth: f64,
    #[serde(default = "default_odmr_contrast")]
    pub odmr_contrast: f64,
    /// Spin readout noise used by the shot-level correlation simulators.
    #[serde(default = "default_sigma_r")]
    pub sigma_r: f64,
    #[serde(default)]
    pub spin_prep: SpinPrep,
}

fn default_family() -> OrientationFamily {
    OrientationFamily::A
}
fn default_lambda0() -> f64 {
    1.6
}
fn default_lambda1() -> f64 {
    6.7
}
fn default_t1() -> f64 {
    1e-3
}
fn default_t2() -> f64 {
    15e-6
}
fn default_rabi() -> f64 {
    5e6
}
fn default_nv_minus() -> f64 {
    0.7
}
fn default_spin_init() -> f64 {
    0.95
}
fn default_fluorescence_rate() -> f64 {
    1e5
}
fn default_odmr_center() -> f64 {
    2.87e9
}
fn default_odmr_linewidth() -> f64 {
    10e6
}
fn default_odmr_contrast() -> f64 {
    0.05
}
fn default_sigma_r() -> f64 {
    12.0
}

impl NVSite {
    /// A site at `position` with every other parameter at its default.
    pub fn at(id: u32, x: f64, y: f64) -> Self {
        Self {
            id,
            position: [x, y],
            orientation_family: default_family(),
            lambda0: default_lambda0(),
            lambda1: default_lambda1(),
            t1: default_t1(),
            t2_xy8: default_t2(),
            rabi_freq: default_rabi(),
            nv_minus_init: default_nv_minus(),
            spin_init_fidelity: default_spin_init(),
            fluorescence_rate: default_fluorescence_rate(),
            odmr_center: default_odmr_center(),
            odmr_linewidth: default_odmr_linewidth(),
            odmr_contrast: default_odmr_contrast(),
            sigma_r: default_sigma_r(),
            spin_prep: SpinPrep::Same,
        }
    }

    pub fn x(&self) -> f64 {
        self.position[0]
    }

    pub fn y(&self) -> f64 {
        self.position[1]
    }

    pub fn validate(&self) -> Result<(), InvalidField> {
        check(self.position.iter().all(|v| v.is_finite()), "position", || "must be finite".into())?;
        check(self.lambda0 >= 0.0 && self.lambda0.is_finite(), "lambda0", || {
            format!("{} must be a finite non-negative mean", self.lambda0)
        })?;
        check(self.lambda1 > self.lambda0, "lambda0", || {
            format!("lambda0 = {} must be below lambda1 = {}", self.lambda0, self.lambda1)
        })?;
        check(self.lambda1.is_finite(), "lambda1", || "must be finite".into())?;
        check(self.t1 > 0.0, "t1", || format!("{} must be positive", self.t1))?;
        check(self.t2_xy8 > 0.0, "t2_xy8", || format!("{} must be positive", self.t2_xy8))?;
        check(self.rabi_freq > 0.0, "rabi_freq", || format!("{} must be positive", self.rabi_freq))?;
        check_prob(self.nv_minus_init, "nv_minus_init")?;
        check_prob(self.spin_init_fidelity, "spin_init_fidelity")?;
        check(self.fluorescence_rate > 0.0, "fluorescence_rate", || "must be positive".into())?;
        check(self.odmr_linewidth > 0.0, "odmr_linewidth", || "must be positive".into())?;
        check(self.odmr_contrast > 0.0 && self.odmr_contrast < 1.0, "odmr_contrast", || {
            format!("{} must lie in (0, 1)", self.odmr_contrast)
        })?;
        check(self.sigma_r >= 1.0, "sigma_r", || format!("{} must be at least 1", self.sigma_r))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_site_is_valid() {
        NVSite::at(0, 1.0, 2.0).validate().unwrap();
    }

    #[test]
    fn swapped_lambdas_name_lambda0() {
        let mut s = NVSite::at(0, 1.0, 2.0);
        s.lambda0 = 8.0;
        assert_eq!(s.validate().unwrap_err().field, "lambda0");
    }

    #[test]
    fn probability_bounds() {
        let mut s = NVSite::at(0, 1.0, 2.0);
        s.spin_init_fidelity = 1.2;
        assert_eq!(s.validate().unwrap_err().field, "spin_init_fidelity");
    }
}
