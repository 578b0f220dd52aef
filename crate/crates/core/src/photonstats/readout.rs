//! Spin readout noise σ_R = sqrt(1 + 2(σ0² + σ1²)/(α0 − α1)²).

use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use super::Histogram;
use crate::rng::SeedTree;

/// Bootstrap resamples used by [`sigma_r_from_samples`] unless overridden.
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountStats {
    pub mean: f64,
    pub variance: f64,
    pub n_samples: Option<usize>,
}

impl CountStats {
    pub fn new(mean: f64, variance: f64) -> Self {
        Self {
            mean,
            variance,
            n_samples: None,
        }
    }

    pub fn from_samples(samples: &[u32]) -> Result<Self, ReadoutError> {
        if samples.len() < 2 {
            return Err(ReadoutError::TooFewSamples(samples.len()));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().map(|&s| f64::from(s)).sum::<f64>() / n;
        let variance = samples.iter().map(|&s| (f64::from(s) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self {
            mean,
            variance,
            n_samples: Some(samples.len()),
        })
    }

    pub fn from_histogram(h: &Histogram) -> Result<Self, ReadoutError> {
        let n = h.total() as usize;
        if n < 2 {
            return Err(ReadoutError::TooFewSamples(n));
        }
        Ok(Self {
            mean: h.mean(),
            variance: h.variance(),
            n_samples: Some(n),
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReadoutError {
    #[error("state means are equal ({0}); readout contrast is undefined")]
    UndefinedContrast(f64),
    #[error("need at least 2 samples per state, got {0}")]
    TooFewSamples(usize),
    #[error("variance {0} is negative")]
    NegativeVariance(f64),
}

pub fn readout_noise(s0: &CountStats, s1: &CountStats) -> Result<f64, ReadoutError> {
    for s in [s0, s1] {
        if s.variance < 0.0 {
            return Err(ReadoutError::NegativeVariance(s.variance));
        }
    }
    let contrast = s0.mean - s1.mean;
    if contrast == 0.0 {
        return Err(ReadoutError::UndefinedContrast(s0.mean));
    }
    Ok((1.0 + 2.0 * (s0.variance + s1.variance) / (contrast * contrast)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaREstimate {
    pub sigma_r: f64,
    /// Bootstrap standard deviation of σ_R.
    pub stderr: f64,
    pub resamples: usize,
}

/// Plug-in σ_R from two count sequences with a bootstrap standard error.
///
/// Each bootstrap replicate redraws both sequences with replacement, done as a
/// multinomial over the observed histogram (a chain of conditional binomials).
pub fn sigma_r_from_samples(
    samples0: &[u32],
    samples1: &[u32],
    resamples: usize,
    seed: u64,
) -> Result<SigmaREstimate, ReadoutError> {
    let s0 = CountStats::from_samples(samples0)?;
    let s1 = CountStats::from_samples(samples1)?;
    let sigma_r = readout_noise(&s0, &s1)?;
    let h0 = Histogram::from_samples(samples0.iter().copied());
    let h1 = Histogram::from_samples(samples1.iter().copied());
    let tree = SeedTree::new(seed);
    let mut reps = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut rng = tree.stream("sigma-r-bootstrap", &[b as u64]);
        let r0 = resample(&h0, &mut rng);
        let r1 = resample(&h1, &mut rng);
        if let (Ok(a), Ok(c)) = (CountStats::from_histogram(&r0), CountStats::from_histogram(&r1)) {
            if let Ok(v) = readout_noise(&a, &c) {
                reps.push(v);
            }
        }
    }
    let stderr = if reps.len() >= 2 {
        let m = reps.iter().sum::<f64>() / reps.len() as f64;
        (reps.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(SigmaREstimate {
        sigma_r,
        stderr,
        resamples: reps.len(),
    })
}

fn resample<R: rand::Rng>(h: &Histogram, rng: &mut R) -> Histogram {
    let total = h.total();
    let mut left = total;
    let mut mass_left = total;
    let mut out = Vec::with_capacity(h.frequencies().len());
    for &f in h.frequencies() {
        if left == 0 || mass_left == 0 {
            out.push(0);
            continue;
        }
        let p = (f as f64 / mass_left as f64).min(1.0);
        let draw = if p >= 1.0 {
            left
        } else {
            Binomial::new(left, p).unwrap().sample(rng)
        };
        out.push(draw);
        left -= draw;
        mass_left -= f;
    }
    Histogram::from_frequencies(out)
}
