//! Three-level rate-equation model of spin-to-charge conversion.
//!
//! States are NV⁻(m_s=0), NV⁻(m_s=±1) and NV⁰. Under a constant-power
//! ionization pulse the populations obey dp/dt = Q(P)·p, where Q has
//! non-negative off-diagonals and zero column sums; the solution over a pulse
//! is the matrix exponential exp(Q·t).
//!
//! All powers are per addressed spot, in watts.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{check, check_prob, InvalidField};
use crate::photonstats::{readout_noise, PoissonMixture};

/// Total ionization power and spot count used for the single-spot calibration.
pub const EXPERIMENT_TOTAL_POWER: f64 = 0.030;
pub const EXPERIMENT_SITES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WavelengthPreset {
    #[default]
    #[serde(rename = "orange_594")]
    Orange594,
    #[serde(rename = "red_637")]
    Red637,
}

impl WavelengthPreset {
    /// Multiplier on the recombination coefficient.
    pub fn recombination_scale(self) -> f64 {
        match self {
            Self::Orange594 => 1.0,
            Self::Red637 => 0.1,
        }
    }
}

/// Rate coefficients. Ionization is `k = A·P^n / (1 + P/P_sat)`, recombination
/// `k = B·P^m` (into m_s=0), spin mixing `k = M·P` (symmetric).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateModel {
    /// s⁻¹ W⁻ⁿ
    pub ionization_coeff_ms0: f64,
    /// s⁻¹ W⁻ⁿ
    pub ionization_coeff_ms1: f64,
    pub ionization_exponent: f64,
    /// W
    pub saturation_power: f64,
    /// s⁻¹ W⁻ᵐ, before the wavelength scaling.
    pub recombination_coeff: f64,
    pub recombination_exponent: f64,
    /// s⁻¹ W⁻¹
    pub spin_mixing_coeff: f64,
    pub wavelength_preset: WavelengthPreset,
}

impl Default for RateModel {
    fn default() -> Self {
        Self {
            ionization_coeff_ms0: 3.84e10,
            ionization_coeff_ms1: 1.152e11,
            ionization_exponent: 2.0,
            saturation_power: 0.020,
            recombination_coeff: 1.152e10,
            recombination_exponent: 2.0,
            spin_mixing_coeff: 3.84e8,
            wavelength_preset: WavelengthPreset::Orange594,
        }
    }
}

impl RateModel {
    pub fn with_preset(mut self, preset: WavelengthPreset) -> Self {
        self.wavelength_preset = preset;
        self
    }

    pub fn validate(&self) -> Result<(), InvalidField> {
        let nonneg = [
            (self.ionization_coeff_ms0, "ionization_coeff_ms0"),
            (self.ionization_coeff_ms1, "ionization_coeff_ms1"),
            (self.recombination_coeff, "recombination_coeff"),
            (self.spin_mixing_coeff, "spin_mixing_coeff"),
        ];
        for (v, name) in nonneg {
            check(v >= 0.0 && v.is_finite(), name, || format!("{v} must be finite and non-negative"))?;
        }
        for (v, name) in [
            (self.ionization_exponent, "ionization_exponent"),
            (self.recombination_exponent, "recombination_exponent"),
            (self.saturation_power, "saturation_power"),
        ] {
            check(v > 0.0 && v.is_finite(), name, || format!("{v} must be positive"))?;
        }
        Ok(())
    }

    pub fn ionization_rate_ms0(&self, power: f64) -> f64 {
        self.ionization_coeff_ms0 * self.ionization_shape(power)
    }

    pub fn ionization_rate_ms1(&self, power: f64) -> f64 {
        self.ionization_coeff_ms1 * self.ionization_shape(power)
    }

    pub fn recombination_rate(&self, power: f64) -> f64 {
        self.recombination_coeff * self.wavelength_preset.recombination_scale() * power.powf(self.recombination_exponent)
    }

    pub fn spin_mixing_rate(&self, power: f64) -> f64 {
        self.spin_mixing_coeff * power
    }

    fn ionization_shape(&self, power: f64) -> f64 {
        power.powf(self.ionization_exponent) / (1.0 + power / self.saturation_power)
    }

    /// Generator Q with dp/dt = Q·p for p = (ms0, ms1, NV⁰).
    pub fn generator(&self, power: f64) -> Matrix3<f64> {
        let ki0 = self.ionization_rate_ms0(power);
        let ki1 = self.ionization_rate_ms1(power);
        let kr = self.recombination_rate(power);
        let km = self.spin_mixing_rate(power);
        Matrix3::new(
            -ki0 - km, km, kr, //
            km, -ki1 - km, 0.0, //
            ki0, ki1, -kr,
        )
    }

    /// Propagator exp(Q·t).
    pub fn propagator(&self, power: f64, t: f64) -> Matrix3<f64> {
        (self.generator(power) * t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelPopulations {
    pub p_minus_ms0: f64,
    pub p_minus_ms1: f64,
    pub p_zero: f64,
}

impl LevelPopulations {
    pub fn new(p_minus_ms0: f64, p_minus_ms1: f64, p_zero: f64) -> Result<Self, InvalidField> {
        let p = Self {
            p_minus_ms0,
            p_minus_ms1,
            p_zero,
        };
        check_prob(p_minus_ms0, "p_minus_ms0")?;
        check_prob(p_minus_ms1, "p_minus_ms1")?;
        check_prob(p_zero, "p_zero")?;
        check((p.total() - 1.0).abs() <= 1e-9, "p_zero", || {
            format!("populations sum to {}, not 1", p.total())
        })?;
        Ok(p)
    }

    /// Post-initialization state; `pi_pulse` swaps the spin populations.
    pub fn initialized(nv_minus: f64, spin_init: f64, pi_pulse: bool) -> Self {
        let (a, b) = (nv_minus * spin_init, nv_minus * (1.0 - spin_init));
        let (ms0, ms1) = if pi_pulse { (b, a) } else { (a, b) };
        Self {
            p_minus_ms0: ms0,
            p_minus_ms1: ms1,
            p_zero: 1.0 - nv_minus,
        }
    }

    pub fn total(&self) -> f64 {
        self.p_minus_ms0 + self.p_minus_ms1 + self.p_zero
    }

    pub fn nv_minus(&self) -> f64 {
        self.p_minus_ms0 + self.p_minus_ms1
    }

    fn to_vec(self) -> Vector3<f64> {
        Vector3::new(self.p_minus_ms0, self.p_minus_ms1, self.p_zero)
    }

    fn from_vec(v: Vector3<f64>) -> Self {
        Self {
            p_minus_ms0: v[0],
            p_minus_ms1: v[1],
            p_zero: v[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub populations: Vec<LevelPopulations>,
}

impl Trajectory {
    pub fn last(&self) -> LevelPopulations {
        *self.populations.last().expect("trajectory holds at least the initial state")
    }
}

/// Populations at the end of a constant-power pulse.
pub fn evolve_to(model: &RateModel, init: LevelPopulations, power: f64, duration: f64) -> LevelPopulations {
    LevelPopulations::from_vec(model.propagator(power, duration) * init.to_vec())
}

/// Trajectory on the uniform grid `t_k = k·duration/steps`, k = 0..=steps.
///
/// Each sample is computed from its own propagator so errors do not accumulate.
pub fn evolve(model: &RateModel, init: LevelPopulations, power: f64, duration: f64, steps: usize) -> Trajectory {
    let steps = steps.max(1);
    let q = model.generator(power);
    let p0 = init.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut populations = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = duration * k as f64 / steps as f64;
        times.push(t);
        populations.push(LevelPopulations::from_vec((q * t).exp() * p0));
    }
    Trajectory { times, populations }
}

/// Initial charge and spin preparation before the ionization pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SccSetup {
    pub nv_minus_init: f64,
    pub spin_init_fidelity: f64,
    /// Mean photons per charge readout of NV⁰.
    pub lambda0: f64,
    /// Mean photons per charge readout of NV⁻.
    pub lambda1: f64,
}

impl Default for SccSetup {
    fn default() -> Self {
        Self {
            nv_minus_init: 0.7,
            spin_init_fidelity: 0.95,
            lambda0: 1.6,
            lambda1: 6.7,
        }
    }
}

impl SccSetup {
    pub fn validate(&self) -> Result<(), InvalidField> {
        check_prob(self.nv_minus_init, "nv_minus_init")?;
        check_prob(self.spin_init_fidelity, "spin_init_fidelity")?;
        check(self.lambda0 >= 0.0, "lambda0", || format!("{} must be non-negative", self.lambda0))?;
        check(self.lambda1 > self.lambda0, "lambda0", || {
            format!("lambda0 {} must be below lambda1 {}", self.lambda0, self.lambda1)
        })
    }
}

/// Photon-count distributions after SCC without and with a π pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SccDistributions {
    pub no_pi: PoissonMixture,
    pub pi: PoissonMixture,
}

impl SccDistributions {
    pub fn pmfs(&self) -> (Vec<f64>, Vec<f64>) {
        let len = self.no_pi.support_len().max(self.pi.support_len());
        let table = |m: &PoissonMixture| (0..len as u64).map(|k| m.pmf(k)).collect();
        (table(&self.no_pi), table(&self.pi))
    }

    /// σ_R of the pair; infinite when the two distributions have equal means.
    pub fn sigma_r(&self) -> f64 {
        readout_noise(&self.no_pi.stats(), &self.pi.stats()).unwrap_or(f64::INFINITY)
    }
}

pub fn scc_distributions(model: &RateModel, power: f64, t_ion: f64, setup: &SccSetup) -> SccDistributions {
    let e = model.propagator(power, t_ion);
    let mixture = |pi_pulse| {
        let init = LevelPopulations::initialized(setup.nv_minus_init, setup.spin_init_fidelity, pi_pulse);
        let w = (e * init.to_vec()).iter().take(2).sum::<f64>().clamp(0.0, 1.0);
        PoissonMixture {
            lambda0: setup.lambda0,
            lambda1: setup.lambda1,
            w_minus: w,
        }
    };
    SccDistributions {
        no_pi: mixture(false),
        pi: mixture(true),
    }
}

pub fn sigma_r_curve(model: &RateModel, power: f64, t_grid: &[f64], setup: &SccSetup) -> Vec<f64> {
    t_grid
        .iter()
        .map(|&t| scc_distributions(model, power, t, setup).sigma_r())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub t_star: f64,
    pub sigma_r_star: f64,
}

/// Log-spaced grid from `t_min` to `t_max`, inclusive.
pub fn log_grid(t_min: f64, t_max: f64, points: usize) -> Vec<f64> {
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Default ionization-time search grid: 1 ns to 100 µs, 400 log-spaced points.
pub fn default_t_grid() -> Vec<f64> {
    log_grid(1e-9, 1e-4, 400)
}

pub fn optimal_ionization(model: &RateModel, power: f64, setup: &SccSetup) -> Optimum {
    optimal_ionization_on(model, power, setup, &default_t_grid())
}

/// Grid argmin refined by golden-section search in ln t over the neighbouring
/// grid cells. A curve that is infinite everywhere yields an infinite optimum.
pub fn optimal_ionization_on(model: &RateModel, power: f64, setup: &SccSetup, t_grid: &[f64]) -> Optimum {
    let curve = sigma_r_curve(model, power, t_grid, setup);
    let (i, &s) = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    if !s.is_finite() {
        return Optimum {
            t_star: t_grid[i],
            sigma_r_star: f64::INFINITY,
        };
    }
    let lo = t_grid[i.saturating_sub(1)].ln();
    let hi = t_grid[(i + 1).min(t_grid.len() - 1)].ln();
    let f = |u: f64| scc_distributions(model, power, u.exp(), setup).sigma_r();
    let (u, v) = golden_section(f, lo, hi, 1e-6);
    if v <= s {
        Optimum {
            t_star: u.exp(),
            sigma_r_star: v,
        }
    } else {
        Optimum {
            t_star: t_grid[i],
            sigma_r_star: s,
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub power_per_nv: f64,
    pub t_star: f64,
    pub sigma_r_star: f64,
}

/// Optimal σ_R when `total_power` is split evenly over `n` spots, per `n`.
pub fn multiplex_scaling(model: &RateModel, total_power: f64, n_list: &[usize], setup: &SccSetup) -> Vec<ScalingRow> {
    n_list
        .par_iter()
        .map(|&n| {
            let p = total_power / n as f64;
            let o = optimal_ionization(model, p, setup);
            ScalingRow {
                n,
                power_per_nv: p,
                t_star: o.t_star,
                sigma_r_star: o.sigma_r_star,
            }
        })
        .collect()
}

pub const SCALING_CSV_HEADER: &str = "n,power_per_nv,t_star_ns,sigma_r_star";

pub fn scaling_csv_row(r: &ScalingRow) -> String {
    format!("{},{:.9e},{:.6},{:.9}", r.n, r.power_per_nv, r.t_star * 1e9, r.sigma_r_star)
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SCALING_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", scaling_csv_row(r))?;
    }
    Ok(())
}
