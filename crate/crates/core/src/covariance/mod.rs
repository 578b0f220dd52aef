//! Covariance magnetometry: pairwise Pearson correlators, the common-gain
//! background model, baseline subtraction and shot-level simulators.

mod sim;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{check, InvalidField};
use crate::rng::SeedTree;

pub use sim::{
    calibrate_baseline, fit_cos2, simulate_background, simulate_driven, simulate_spectroscopy, Cos2Fit,
    DrivenSequence, SccReadout, ShotOptions, SpectroscopyConfig, DEFAULT_COMMON_NOISE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sequence {0} has zero variance")]
    ZeroVariance(usize),
    #[error(transparent)]
    Invalid(#[from] InvalidField),
}

/// One pairwise correlator. `r_corr = r_raw − baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub sweep_value: f64,
    pub site_i: u32,
    pub site_j: u32,
    pub r_raw: f64,
    pub stderr: f64,
    pub baseline: f64,
    pub r_corr: f64,
    pub n_shots: u64,
}

fn small_r_stderr(r: f64, n: u64) -> f64 {
    (1.0 - r * r) / ((n - 1) as f64).sqrt()
}

/// Sample Pearson correlation of two equal-length sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<CorrelationRecord, CovarianceError> {
    if a.len() != b.len() {
        return Err(CovarianceError::LengthMismatch(a.len(), b.len()));
    }
    let mut acc = CovAccumulator::new(2);
    for (&x, &y) in a.iter().zip(b) {
        acc.push(&[x, y]);
    }
    let r = acc.correlation(0, 1)?;
    Ok(CorrelationRecord {
        sweep_value: 0.0,
        site_i: 0,
        site_j: 1,
        r_raw: r,
        stderr: small_r_stderr(r, acc.n),
        baseline: 0.0,
        r_corr: r,
        n_shots: acc.n,
    })
}

/// Bootstrap standard error of the Pearson correlation (paired resampling).
pub fn pearson_bootstrap_stderr(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64, CovarianceError> {
    pearson(a, b)?;
    let n = a.len();
    let tree = SeedTree::new(seed);
    let mut rs = Vec::with_capacity(resamples);
    for i in 0..resamples {
        let mut rng = tree.stream("pearson-bootstrap", &[i as u64]);
        let mut acc = CovAccumulator::new(2);
        for _ in 0..n {
            let k = rng.random_range(0..n);
            acc.push(&[a[k], b[k]]);
        }
        if let Ok(r) = acc.correlation(0, 1) {
            rs.push(r);
        }
    }
    if rs.len() < 2 {
        return Err(CovarianceError::TooFewSamples(rs.len()));
    }
    let m = rs.iter().sum::<f64>() / rs.len() as f64;
    Ok((rs.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rs.len() - 1) as f64).sqrt())
}

/// One-pass mean and co-moment matrix over `k` channels. Partial
/// accumulators combine with [`merge`](Self::merge).
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    n: u64,
    mean: Vec<f64>,
    /// Row-major k×k sums of centred cross-products.
    comoment: Vec<f64>,
    scratch: Vec<f64>,
}

impl CovAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; k],
            comoment: vec![0.0; k * k],
            scratch: vec![0.0; k],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        let k = self.channels();
        debug_assert_eq!(x.len(), k);
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        let d_old = &mut self.scratch;
        for c in 0..k {
            d_old[c] = x[c] - self.mean[c];
            self.mean[c] += d_old[c] * inv;
        }
        for i in 0..k {
            let d_new_i = x[i] - self.mean[i];
            for j in 0..k {
                self.comoment[i * k + j] += d_old[j] * d_new_i;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.channels(), other.channels(), "channel count differs");
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let k = self.channels();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = (0..k).map(|c| other.mean[c] - self.mean[c]).collect();
        for i in 0..k {
            for j in 0..k {
                self.comoment[i * k + j] += other.comoment[i * k + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for c in 0..k {
            self.mean[c] += delta[c] * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self, c: usize) -> f64 {
        self.mean[c]
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.comoment[i * self.channels() + j] / (self.n as f64 - 1.0)
    }

    pub fn correlation(&self, i: usize, j: usize) -> Result<f64, CovarianceError> {
        if self.n < 2 {
            return Err(CovarianceError::TooFewSamples(self.n as usize));
        }
        let k = self.channels();
        let (vi, vj) = (self.comoment[i * k + i], self.comoment[j * k + j]);
        if vi <= 0.0 {
            return Err(CovarianceError::ZeroVariance(i));
        }
        if vj <= 0.0 {
            return Err(CovarianceError::ZeroVariance(j));
        }
        Ok((self.comoment[i * k + j] / (vi * vj).sqrt()).clamp(-1.0, 1.0))
    }

    /// All `k(k−1)/2` pair records, labelled by `ids`, with `baseline` subtracted.
    pub fn records(&self, ids: &[u32], sweep_value: f64, baseline: &Baseline) -> Result<Vec<CorrelationRecord>, CovarianceError> {
        let k = self.channels();
        let mut out = Vec::with_capacity(k * (k.saturating_sub(1)) / 2);
        for i in 0..k {
            for j in i + 1..k {
                let r = self.correlation(i, j)?;
                let raw = CorrelationRecord {
                    sweep_value,
                    site_i: ids[i],
                    site_j: ids[j],
                    r_raw: r,
                    stderr: small_r_stderr(r, self.n),
                    baseline: 0.0,
                    r_corr: r,
                    n_shots: self.n,
                };
                out.push(raw);
            }
        }
        Ok(subtract_baseline(&out, baseline))
    }
}

/// Two Poisson(μ) emitters read through a shared gain N ~ Normal(1, σ_N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundModel {
    pub mu: f64,
    pub sigma_n: f64,
}

impl BackgroundModel {
    pub fn new(mu: f64, sigma_n: f64) -> Result<Self, InvalidField> {
        let m = Self { mu, sigma_n };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), InvalidField> {
        check(self.mu >= 0.0 && self.mu.is_finite(), "mu", || format!("{} must be non-negative", self.mu))?;
        check(self.sigma_n >= 0.0 && self.sigma_n.is_finite(), "sigma_n", || {
            format!("{} must be non-negative", self.sigma_n)
        })
    }

    /// Small-noise regime where μσ_N² approximates the exact value to within 10%:
    /// exact/approx = 1/(1 + μσ_N² + σ_N²).
    pub fn in_validity_regime(&self) -> bool {
        let s2 = self.sigma_n * self.sigma_n;
        self.mu * s2 + s2 < 0.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundCorrelation {
    pub exact: f64,
    pub approx: f64,
    pub valid: bool,
}

pub fn background_correlation(bg: &BackgroundModel) -> BackgroundCorrelation {
    let s2 = bg.sigma_n * bg.sigma_n;
    let a = bg.mu * s2;
    // μ²σ²/(μ²σ² + μσ² + μ), divided through by μ; zero at μ = 0.
    let exact = if bg.mu == 0.0 { 0.0 } else { a / (a + s2 + 1.0) };
    BackgroundCorrelation {
        exact,
        approx: a,
        valid: bg.in_validity_regime(),
    }
}

/// Measured correlation of the gained signals when the emitters themselves
/// correlate with `r_true`.
pub fn gained_correlation(bg: &BackgroundModel, r_true: f64) -> f64 {
    if bg.mu == 0.0 {
        return 0.0;
    }
    let s2 = bg.sigma_n * bg.sigma_n;
    let a = bg.mu * s2;
    (a + r_true * (s2 + 1.0)) / (a + s2 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    pub exact: f64,
    pub approx: f64,
}

/// Δr = measured − true correlation; non-negative for every |r_true| ≤ 1.
pub fn offset_under_true_correlation(bg: &BackgroundModel, r_true: f64) -> Result<OffsetEstimate, InvalidField> {
    check((-1.0..=1.0).contains(&r_true), "r_true", || format!("{r_true} is not a correlation"))?;
    let b = background_correlation(bg);
    Ok(OffsetEstimate {
        exact: (1.0 - r_true) * b.exact,
        approx: (1.0 - r_true) * b.approx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub stderr: f64,
}

impl Baseline {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }
}

/// Output of an independent null calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineCalibration {
    pub baseline: f64,
    pub stderr: f64,
    pub n_pairs: usize,
    pub n_shots: u64,
}

impl From<BaselineCalibration> for Baseline {
    fn from(c: BaselineCalibration) -> Self {
        Baseline::new(c.baseline, c.stderr)
    }
}

/// Shift every record by the scalar baseline; the baseline error adds in quadrature.
pub fn subtract_baseline(records: &[CorrelationRecord], baseline: &Baseline) -> Vec<CorrelationRecord> {
    records
        .iter()
        .map(|r| CorrelationRecord {
            baseline: baseline.value,
            r_corr: r.r_raw - baseline.value,
            stderr: ((r.stderr * r.stderr) + baseline.stderr * baseline.stderr).sqrt(),
            ..*r
        })
        .collect()
}

/// r_ij = c_i·c_j·⟨sin φ_i sin φ_j⟩ / (σ_Ri σ_Rj), where c = e^{−χ̃} are the coherence factors.
pub fn expected_pair_correlation(
    coherence_i: f64,
    coherence_j: f64,
    sigma_ri: f64,
    sigma_rj: f64,
    phase_product: f64,
) -> Result<f64, InvalidField> {
    for (v, f) in [(coherence_i, "coherence_i"), (coherence_j, "coherence_j")] {
        check(v > 0.0 && v <= 1.0, f, || format!("{v} must lie in (0, 1]"))?;
    }
    for (v, f) in [(sigma_ri, "sigma_ri"), (sigma_rj, "sigma_rj")] {
        check(v >= 1.0, f, || format!("{v} must be at least 1"))?;
    }
    check((-1.0..=1.0).contains(&phase_product), "phase_product", || {
        format!("{phase_product} must lie in [-1, 1]")
    })?;
    Ok(coherence_i * coherence_j * phase_product / (sigma_ri * sigma_rj))
}

/// σ_R of a symmetric pair from the amplitude of its correlation oscillation.
pub fn sigma_r_from_amplitude(amplitude: f64) -> Result<f64, InvalidField> {
    check(amplitude > 0.0 && amplitude <= 1.0, "amplitude", || {
        format!("{amplitude} must lie in (0, 1]")
    })?;
    Ok(1.0 / amplitude.sqrt())
}

pub const CORRELATOR_CSV_HEADER: &str = "sweep_value,site_i,site_j,r_raw,r_corr,stderr,n_shots";

pub fn write_correlator_csv<W: Write>(mut w: W, records: &[CorrelationRecord]) -> std::io::Result<()> {
    writeln!(w, "{CORRELATOR_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{:e},{:e},{:e},{}",
            r.sweep_value, r.site_i, r.site_j, r.r_raw, r.r_corr, r.stderr, r.n_shots
        )?;
    }
    Ok(())
}
