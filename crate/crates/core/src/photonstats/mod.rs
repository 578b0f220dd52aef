//! Poisson-mixture photon statistics for charge and spin-to-charge readout.
//!
//! A readout produces `k` photons drawn from Poisson(λ0) when the emitter is
//! neutral and Poisson(λ1) when it is negatively charged; an ensemble of
//! readouts is the two-component mixture with NV⁻ weight `w_minus`.

mod fidelity;
mod fit;
mod histogram;
mod readout;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{check, check_prob, InvalidField};

pub use fidelity::{charge_fidelity, ChargeFidelity, FidelityError};
pub use fit::{fit_double_poisson, FitError, FitOptions, FitReport, MixtureFit};
pub use histogram::{Histogram, HistogramError};
pub use readout::{
    readout_noise, sigma_r_from_samples, CountStats, ReadoutError, SigmaREstimate, DEFAULT_BOOTSTRAP_RESAMPLES,
};

/// Tail mass below which the PMF support is truncated.
pub const TAIL_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonMixture {
    pub lambda0: f64,
    pub lambda1: f64,
    pub w_minus: f64,
}

impl PoissonMixture {
    pub fn new(lambda0: f64, lambda1: f64, w_minus: f64) -> Result<Self, InvalidField> {
        let m = Self {
            lambda0,
            lambda1,
            w_minus,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), InvalidField> {
        check(self.lambda0 >= 0.0 && self.lambda0.is_finite(), "lambda0", || {
            format!("{} must be finite and non-negative", self.lambda0)
        })?;
        check(self.lambda1 >= 0.0 && self.lambda1.is_finite(), "lambda1", || {
            format!("{} must be finite and non-negative", self.lambda1)
        })?;
        check_prob(self.w_minus, "w_minus")
    }

    pub fn pmf(&self, k: u64) -> f64 {
        mixture_pmf(self, k)
    }

    pub fn mean(&self) -> f64 {
        (1.0 - self.w_minus) * self.lambda0 + self.w_minus * self.lambda1
    }

    /// Mixture variance: within-component Poisson variance plus the spread of the means.
    pub fn variance(&self) -> f64 {
        let w = self.w_minus;
        self.mean() + w * (1.0 - w) * (self.lambda1 - self.lambda0).powi(2)
    }

    pub fn stats(&self) -> CountStats {
        CountStats {
            mean: self.mean(),
            variance: self.variance(),
            n_samples: None,
        }
    }

    /// Number of support points `0..len` carrying all but [`TAIL_CUTOFF`] of the mass.
    pub fn support_len(&self) -> usize {
        poisson_support_len(self.lambda0.max(self.lambda1))
    }

    /// PMF over the truncated support.
    pub fn pmf_table(&self) -> Vec<f64> {
        (0..self.support_len() as u64).map(|k| self.pmf(k)).collect()
    }
}

pub fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp()
}

pub(crate) fn poisson_ln_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

pub fn mixture_pmf(m: &PoissonMixture, k: u64) -> f64 {
    (1.0 - m.w_minus) * poisson_pmf(m.lambda0, k) + m.w_minus * poisson_pmf(m.lambda1, k)
}

/// Smallest `n` such that P(X ≥ n) < [`TAIL_CUTOFF`] for X ~ Poisson(λ).
pub fn poisson_support_len(lambda: f64) -> usize {
    let mut cdf = 0.0;
    let mut k = 0u64;
    loop {
        cdf += poisson_pmf(lambda, k);
        k += 1;
        if 1.0 - cdf < TAIL_CUTOFF && k as f64 > lambda {
            return k as usize;
        }
        if k > 100_000 {
            return k as usize;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_point_mass() {
        let m = PoissonMixture::new(0.0, 0.0, 0.5).unwrap();
        assert_eq!(mixture_pmf(&m, 0), 1.0);
        assert_eq!(mixture_pmf(&m, 3), 0.0);
    }

    #[test]
    fn zero_count_closed_form() {
        let m = PoissonMixture::new(1.6, 6.7, 0.7).unwrap();
        let want = 0.3 * (-1.6f64).exp() + 0.7 * (-6.7f64).exp();
        assert!((mixture_pmf(&m, 0) - want).abs() < 1e-15);
    }

    #[test]
    fn full_weight_collapses_to_single_poisson() {
        let m = PoissonMixture::new(1.6, 6.7, 1.0).unwrap();
        for k in 0..=50 {
            assert_eq!(mixture_pmf(&m, k), poisson_pmf(6.7, k));
        }
    }

    #[test]
    fn normalization_over_truncated_support() {
        for &(a, b, w) in &[(1.6, 6.7, 0.7), (0.0, 30.0, 0.2), (0.1, 0.2, 0.99), (12.0, 80.0, 0.5)] {
            let m = PoissonMixture::new(a, b, w).unwrap();
            let s: f64 = m.pmf_table().iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "{a} {b} {w}: {s}");
        }
    }

    #[test]
    fn pmf_agrees_with_product_recurrence() {
        // λ^k e^-λ / k! built multiplicatively, independent of ln_factorial.
        let lambda: f64 = 6.7;
        let mut p = (-lambda).exp();
        for k in 0..40u64 {
            assert!((poisson_pmf(lambda, k) - p).abs() <= 1e-12 * p);
            p *= lambda / (k + 1) as f64;
        }
    }

    #[test]
    fn moments_match_summation() {
        let m = PoissonMixture::new(1.6, 6.7, 0.7).unwrap();
        let t = m.pmf_table();
        let mean: f64 = t.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let var: f64 = t.iter().enumerate().map(|(k, p)| (k as f64 - mean).powi(2) * p).sum();
        assert!((mean - m.mean()).abs() < 1e-9);
        assert!((var - m.variance()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_weight() {
        assert_eq!(PoissonMixture::new(1.0, 2.0, 1.5).unwrap_err().field, "w_minus");
    }
}
