//! Physical constants used by the sensitivity and phase-accumulation models.

use serde::{Deserialize, Serialize};

/// Planck constant, J·s (exact, SI 2019).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);
/// Bohr magneton, J/T (CODATA 2018).
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysConstants {
    pub h: f64,
    pub g: f64,
    pub mu_b: f64,
}

impl Default for PhysConstants {
    fn default() -> Self {
        Self {
            h: PLANCK,
            g: 2.0,
            mu_b: BOHR_MAGNETON,
        }
    }
}

impl PhysConstants {
    /// h / (g μB), the field-per-frequency conversion in T·s.
    pub fn field_per_hz(&self) -> f64 {
        self.h / (self.g * self.mu_b)
    }

    /// Electron gyromagnetic ratio g μB / ħ in rad s⁻¹ T⁻¹.
    pub fn gyromagnetic_ratio(&self) -> f64 {
        self.g * self.mu_b * 2.0 * std::f64::consts::PI / self.h
    }
}
