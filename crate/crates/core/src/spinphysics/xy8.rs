//! XY8 dynamical decoupling: toggling-frame phase and coherence decay.
//!
//! With N π pulses at t_k = (k − ½)τ the toggling function s(t) is +1 on
//! [0, τ/2) and flips at every pulse; the sequence lasts T = Nτ. The phase
//! picked up from a field B·cos(2πft + φ) is γB∫₀ᵀ s(t) cos(2πft + φ) dt.

use serde::{Deserialize, Serialize};

use crate::constants::PhysConstants;
use crate::error::{check, InvalidField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XY8Config {
    /// Interpulse spacing, s.
    pub tau: f64,
    /// Number of π pulses, a positive multiple of 8.
    pub n_pulses: usize,
}

impl Default for XY8Config {
    fn default() -> Self {
        Self {
            tau: 250e-9,
            n_pulses: 16,
        }
    }
}

impl XY8Config {
    pub fn validate(&self) -> Result<(), InvalidField> {
        check(self.tau > 0.0 && self.tau.is_finite(), "tau", || format!("{} must be positive", self.tau))?;
        check(self.n_pulses >= 8 && self.n_pulses.is_multiple_of(8), "n_pulses", || {
            format!("{} is not a positive multiple of 8", self.n_pulses)
        })
    }

    pub fn total_time(&self) -> f64 {
        self.n_pulses as f64 * self.tau
    }

    /// Filter centre 1/(2τ).
    pub fn resonance(&self) -> f64 {
        0.5 / self.tau
    }

    /// Segment boundaries and toggling signs.
    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let n = self.n_pulses;
        (0..=n).map(move |k| {
            let a = if k == 0 { 0.0 } else { (k as f64 - 0.5) * self.tau };
            let b = if k == n { self.total_time() } else { (k as f64 + 0.5) * self.tau };
            (a, b, if k % 2 == 0 { 1.0 } else { -1.0 })
        })
    }

    /// ∫₀ᵀ s(t)·e^{i(2πft + φ)} dt as (real, imaginary).
    pub fn response(&self, f: f64, phase: f64) -> (f64, f64) {
        let w = std::f64::consts::TAU * f;
        let (mut re, mut im) = (0.0, 0.0);
        for (a, b, s) in self.segments() {
            if w == 0.0 {
                re += s * (b - a) * phase.cos();
                im += s * (b - a) * phase.sin();
            } else {
                re += s * ((w * b + phase).sin() - (w * a + phase).sin()) / w;
                im += s * ((w * a + phase).cos() - (w * b + phase).cos()) / w;
            }
        }
        (re, im)
    }
}

/// Classical AC field B·cos(2πft + φ) along the NV axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcField {
    /// T
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// rad
    pub phase: f64,
}

/// Accumulated phase φ_C in radians.
pub fn xy8_phase(cfg: &XY8Config, ac: &AcField, constants: &PhysConstants) -> f64 {
    constants.gyromagnetic_ratio() * ac.amplitude * cfg.response(ac.frequency, ac.phase).0
}

/// Phase-maximized response |∫ s(t) e^{i2πft} dt| in seconds.
pub fn xy8_filter(cfg: &XY8Config, f: f64) -> f64 {
    let (re, im) = cfg.response(f, 0.0);
    re.hypot(im)
}

/// e^{−(t/T2)^p}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoherenceModel {
    /// s
    pub t2: f64,
    pub exponent: f64,
}

impl Default for CoherenceModel {
    fn default() -> Self {
        Self { t2: 15e-6, exponent: 2.0 }
    }
}

impl CoherenceModel {
    pub fn validate(&self) -> Result<(), InvalidField> {
        check(self.t2 > 0.0, "t2_xy8", || format!("{} must be positive", self.t2))?;
        check(self.exponent > 0.0 && self.exponent <= 4.0, "exponent", || {
            format!("{} must lie in (0, 4]", self.exponent)
        })
    }
}

pub fn coherence_factor(model: &CoherenceModel, t: f64) -> f64 {
    (-(t.max(0.0) / model.t2).powf(model.exponent)).exp()
}
