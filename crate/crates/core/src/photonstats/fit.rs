//! Maximum-likelihood double-Poisson fit by expectation-maximization.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{poisson_ln_pmf, Histogram, PoissonMixture};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop when |ΔlogL| < rel_tol · |logL|.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Components closer than this (in counts) are reported as degenerate.
    pub separation_tol: f64,
    /// Overdispersion significance (in standard errors) required for two components.
    pub dispersion_z: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iter: 20_000,
            separation_tol: 0.05,
            dispersion_z: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub mixture: PoissonMixture,
    pub loglik: f64,
    /// Log-likelihood of the moment-matched starting point.
    pub init_loglik: f64,
    /// Standard errors of (λ0, λ1, w_minus) from the observed information; NaN when singular.
    pub stderr: [f64; 3],
    pub iterations: usize,
    /// Data are consistent with a single Poisson component. Degenerate fits
    /// carry the sample mean in both lambdas and `w_minus = 0`.
    pub degenerate: bool,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("histogram holds {0} readouts; at least 100 are required")]
    InsufficientData(u64),
    #[error("EM did not converge within {iterations} iterations")]
    NotConverged { iterations: usize, best: Box<MixtureFit> },
}

/// Serialized fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lambda0: f64,
    pub lambda1: f64,
    pub w_minus: f64,
    pub fidelity: Option<f64>,
    pub threshold: Option<u64>,
    pub loglik: f64,
}

impl FitReport {
    pub fn from_fit(fit: &MixtureFit) -> Self {
        let fid = super::charge_fidelity(&fit.mixture).ok();
        Self {
            lambda0: fit.mixture.lambda0,
            lambda1: fit.mixture.lambda1,
            w_minus: fit.mixture.w_minus,
            fidelity: fid.map(|f| f.fidelity),
            threshold: fid.map(|f| f.threshold),
            loglik: fit.loglik,
        }
    }
}

pub fn fit_double_poisson(hist: &Histogram, opts: &FitOptions) -> Result<MixtureFit, FitError> {
    let n = hist.total();
    if n < 100 {
        return Err(FitError::InsufficientData(n));
    }
    let mean = hist.mean();
    if mean == 0.0 {
        let mixture = PoissonMixture {
            lambda0: 0.0,
            lambda1: 0.0,
            w_minus: 0.0,
        };
        return Ok(MixtureFit {
            mixture,
            loglik: 0.0,
            init_loglik: 0.0,
            stderr: [f64::NAN; 3],
            iterations: 0,
            degenerate: true,
        });
    }
    let dispersion = hist.variance() / mean - 1.0;
    let dispersion_se = (2.0 / (n as f64 - 1.0)).sqrt();
    let overdispersed = dispersion > opts.dispersion_z * dispersion_se;

    if !overdispersed {
        // Under- or equidispersed data: the single-Poisson MLE is also the mixture MLE.
        let mixture = PoissonMixture {
            lambda0: mean,
            lambda1: mean,
            w_minus: 0.0,
        };
        let ll = loglik(hist, &mixture);
        return Ok(MixtureFit {
            mixture,
            loglik: ll,
            init_loglik: ll,
            stderr: [f64::NAN; 3],
            iterations: 0,
            degenerate: true,
        });
    }

    let init = moment_init(hist);
    let init_loglik = loglik(hist, &init);
    let mut cur = init;
    let mut ll = init_loglik;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let next = em_step(hist, &cur);
        let next_ll = loglik(hist, &next);
        let delta = next_ll - ll;
        cur = next;
        ll = next_ll;
        if delta.abs() < opts.rel_tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let mixture = ordered(cur);
    let degenerate = (mixture.lambda1 - mixture.lambda0).abs() < opts.separation_tol;
    let fit = MixtureFit {
        mixture,
        loglik: ll,
        init_loglik,
        stderr: standard_errors(hist, &mixture),
        iterations,
        degenerate,
    };
    if converged {
        Ok(fit)
    } else {
        Err(FitError::NotConverged {
            iterations,
            best: Box::new(fit),
        })
    }
}

fn ordered(m: PoissonMixture) -> PoissonMixture {
    if m.lambda0 <= m.lambda1 {
        m
    } else {
        PoissonMixture {
            lambda0: m.lambda1,
            lambda1: m.lambda0,
            w_minus: 1.0 - m.w_minus,
        }
    }
}

/// Method-of-moments start from the first three factorial moments.
///
/// For a two-point mixing distribution the component means are the roots of
/// z² − s z + p with s = (f3 − f1 f2)/(f2 − f1²) and p = s f1 − f2.
fn moment_init(hist: &Histogram) -> PoissonMixture {
    let f1 = hist.factorial_moment(1);
    let f2 = hist.factorial_moment(2);
    let f3 = hist.factorial_moment(3);
    let denom = f2 - f1 * f1;
    let from_roots = || -> Option<PoissonMixture> {
        if denom <= 1e-12 * f1.max(1.0) {
            return None;
        }
        let s = (f3 - f1 * f2) / denom;
        let p = s * f1 - f2;
        let disc = s * s - 4.0 * p;
        if !(disc > 0.0) {
            return None;
        }
        let lo = 0.5 * (s - disc.sqrt());
        let hi = 0.5 * (s + disc.sqrt());
        if lo < 0.0 || !(hi > lo) {
            return None;
        }
        let w = ((f1 - lo) / (hi - lo)).clamp(0.01, 0.99);
        Some(PoissonMixture {
            lambda0: lo,
            lambda1: hi,
            w_minus: w,
        })
    };
    from_roots().unwrap_or_else(|| split_at_mean(hist, f1))
}

fn split_at_mean(hist: &Histogram, mean: f64) -> PoissonMixture {
    let (mut n_lo, mut s_lo, mut n_hi, mut s_hi) = (0.0, 0.0, 0.0, 0.0);
    for (k, c) in hist.iter() {
        let (c, kf) = (c as f64, k as f64);
        if kf <= mean {
            n_lo += c;
            s_lo += c * kf;
        } else {
            n_hi += c;
            s_hi += c * kf;
        }
    }
    if n_hi == 0.0 || n_lo == 0.0 {
        return PoissonMixture {
            lambda0: mean,
            lambda1: mean,
            w_minus: 0.5,
        };
    }
    PoissonMixture {
        lambda0: s_lo / n_lo,
        lambda1: s_hi / n_hi,
        w_minus: n_hi / (n_lo + n_hi),
    }
}

fn component_ln(m: &PoissonMixture, k: u64) -> (f64, f64) {
    (
        (1.0 - m.w_minus).ln() + poisson_ln_pmf(m.lambda0, k),
        m.w_minus.ln() + poisson_ln_pmf(m.lambda1, k),
    )
}

fn log_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

pub(crate) fn loglik(hist: &Histogram, m: &PoissonMixture) -> f64 {
    hist.iter()
        .map(|(k, c)| {
            let (a, b) = component_ln(m, k);
            c as f64 * log_add(a, b)
        })
        .sum()
}

fn em_step(hist: &Histogram, m: &PoissonMixture) -> PoissonMixture {
    let (mut r0, mut r1, mut k0, mut k1) = (0.0, 0.0, 0.0, 0.0);
    for (k, c) in hist.iter() {
        let (a, b) = component_ln(m, k);
        let tot = log_add(a, b);
        let p1 = if tot == f64::NEG_INFINITY { 0.5 } else { (b - tot).exp() };
        let c = c as f64;
        r1 += c * p1;
        r0 += c * (1.0 - p1);
        k1 += c * p1 * k as f64;
        k0 += c * (1.0 - p1) * k as f64;
    }
    let n = r0 + r1;
    PoissonMixture {
        lambda0: if r0 > 0.0 { k0 / r0 } else { m.lambda0 },
        lambda1: if r1 > 0.0 { k1 / r1 } else { m.lambda1 },
        w_minus: r1 / n,
    }
}

/// Inverse observed information from a central-difference Hessian of logL.
fn standard_errors(hist: &Histogram, m: &PoissonMixture) -> [f64; 3] {
    let x = [m.lambda0, m.lambda1, m.w_minus];
    let h = [
        1e-4 * m.lambda0.max(1e-2),
        1e-4 * m.lambda1.max(1e-2),
        1e-4 * m.w_minus.min(1.0 - m.w_minus).max(1e-6),
    ];
    let f = |p: [f64; 3]| {
        if p[0] < 0.0 || p[1] < 0.0 || !(0.0..=1.0).contains(&p[2]) {
            return f64::NAN;
        }
        loglik(
            hist,
            &PoissonMixture {
                lambda0: p[0],
                lambda1: p[1],
                w_minus: p[2],
            },
        )
    };
    let mut hess = Matrix3::<f64>::zeros();
    for i in 0..3 {
        for j in i..3 {
            let eval = |si: f64, sj: f64| {
                let mut p = x;
                p[i] += si * h[i];
                p[j] += sj * h[j];
                f(p)
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    match (-hess).try_inverse() {
        Some(cov) => [0, 1, 2].map(|i| if cov[(i, i)] > 0.0 { cov[(i, i)].sqrt() } else { f64::NAN }),
        None => [f64::NAN; 3],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng;
    use rand_distr::{Distribution, Poisson};

    /// Monte Carlo oracle: direct mixture sampling.
    fn draw(m: &PoissonMixture, n: usize, seed: u64) -> Histogram {
        let mut rng = SeedTree::new(seed).stream("fit-test", &[]);
        let p0 = Poisson::new(m.lambda0).unwrap();
        let p1 = Poisson::new(m.lambda1).unwrap();
        Histogram::from_samples((0..n).map(|_| {
            let v: f64 = if rng.random::<f64>() < m.w_minus {
                p1.sample(&mut rng)
            } else {
                p0.sample(&mut rng)
            };
            v as u32
        }))
    }

    #[test]
    fn recovers_reference_mixture_within_three_percent() {
        let truth = PoissonMixture::new(1.6, 6.7, 0.7).unwrap();
        let fit = fit_double_poisson(&draw(&truth, 100_000, 11), &FitOptions::default()).unwrap();
        let m = fit.mixture;
        assert!(!fit.degenerate);
        assert!((m.lambda0 / 1.6 - 1.0).abs() < 0.03, "{m:?}");
        assert!((m.lambda1 / 6.7 - 1.0).abs() < 0.03, "{m:?}");
        assert!((m.w_minus / 0.7 - 1.0).abs() < 0.03, "{m:?}");
        assert!(fit.loglik >= fit.init_loglik);
        assert!(fit.stderr.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn estimation_error_shrinks_with_sample_size() {
        let truth = PoissonMixture::new(1.6, 6.7, 0.7).unwrap();
        // Average over replicates so the comparison is not dominated by one draw.
        let err = |n: usize| -> f64 {
            (0..4)
                .map(|rep| {
                    let m = fit_double_poisson(&draw(&truth, n, 100 + rep), &FitOptions::default())
                        .unwrap()
                        .mixture;
                    (m.lambda0 - 1.6).abs() / 1.6 + (m.lambda1 - 6.7).abs() / 6.7 + (m.w_minus - 0.7).abs() / 0.7
                })
                .sum::<f64>()
                / 4.0
        };
        let (e3, e4, e5) = (err(1_000), err(10_000), err(100_000));
        assert!(e3 > e4 && e4 > e5, "{e3} {e4} {e5}");
    }

    #[test]
    fn pure_poisson_is_flagged_degenerate() {
        let mut rng = SeedTree::new(3).stream("fit-test", &[]);
        let p = Poisson::new(5.0).unwrap();
        let h = Histogram::from_samples((0..50_000).map(|_| p.sample(&mut rng) as u32));
        let fit = fit_double_poisson(&h, &FitOptions::default()).unwrap();
        assert!(fit.degenerate);
    }

    #[test]
    fn all_mass_at_zero() {
        let h = Histogram::from_frequencies(vec![500]);
        let fit = fit_double_poisson(&h, &FitOptions::default()).unwrap();
        assert!(fit.degenerate);
        assert_eq!((fit.mixture.lambda0, fit.mixture.lambda1), (0.0, 0.0));
    }

    #[test]
    fn too_few_readouts() {
        let h = Histogram::from_frequencies(vec![10, 20, 30]);
        assert!(matches!(
            fit_double_poisson(&h, &FitOptions::default()),
            Err(FitError::InsufficientData(60))
        ));
    }

    #[test]
    fn iteration_cap_reports_best_so_far() {
        let truth = PoissonMixture::new(1.6, 6.7, 0.7).unwrap();
        let opts = FitOptions {
            max_iter: 2,
            rel_tol: 0.0,
            ..Default::default()
        };
        match fit_double_poisson(&draw(&truth, 5_000, 5), &opts) {
            Err(FitError::NotConverged { iterations, best }) => {
                assert_eq!(iterations, 2);
                assert!(best.loglik >= best.init_loglik);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn labels_are_ordered() {
        let m = ordered(PoissonMixture {
            lambda0: 5.0,
            lambda1: 1.0,
            w_minus: 0.2,
        });
        assert_eq!((m.lambda0, m.lambda1), (1.0, 5.0));
        assert!((m.w_minus - 0.8).abs() < 1e-15);
    }
}
