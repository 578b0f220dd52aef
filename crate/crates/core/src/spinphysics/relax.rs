//! Relaxometry and Rabi fits.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::lm::{levenberg_marquardt, FitFailure, LmOptions};

const MIN_POINTS: usize = 5;

/// `A·exp(−t/T1) + B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T1Fit {
    pub t1: f64,
    pub t1_stderr: f64,
    /// 95% normal-approximation interval on T1.
    pub t1_ci95: (f64, f64),
    pub amplitude: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

pub fn fit_t1(delays: &[f64], signals: &[f64]) -> Result<T1Fit, FitFailure> {
    check_points(delays, signals, 3)?;
    let (tmin, tmax) = span(delays);
    let (first, last) = endpoint_values(delays, signals);
    let offset0 = last;
    let amp0 = first - last;
    if amp0 == 0.0 || !amp0.is_finite() {
        return Err(FitFailure::Singular);
    }
    // Crossing of the 1/e level gives the starting decay time.
    let target = offset0 + amp0 / std::f64::consts::E;
    let mut idx: Vec<usize> = (0..delays.len()).collect();
    idx.sort_by(|&a, &b| delays[a].total_cmp(&delays[b]));
    let t1_0 = idx
        .iter()
        .find(|&&i| (signals[i] - target) * amp0.signum() <= 0.0)
        .map(|&i| delays[i])
        .unwrap_or(tmax)
        .max((tmax - tmin) / 20.0);
    let res = levenberg_marquardt(
        |p| {
            delays
                .iter()
                .zip(signals)
                .map(|(&t, &y)| p[0] * (-t / p[1]).exp() + p[2] - y)
                .collect()
        },
        &[amp0, t1_0, offset0],
        &LmOptions::default(),
    )?;
    let p = &res.params;
    if !(p[1] > 0.0) {
        return Err(FitFailure::Singular);
    }
    let se = res.stderr(1);
    Ok(T1Fit {
        t1: p[1],
        t1_stderr: se,
        t1_ci95: (p[1] - 1.96 * se, p[1] + 1.96 * se),
        amplitude: p[0],
        offset: p[2],
        rms_residual: (res.cost / delays.len() as f64).sqrt(),
    })
}

/// `B + A·exp(−t/τ)·cos(2π·Ω·t)`; Ω is the Rabi frequency in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    pub rabi_freq: f64,
    pub rabi_freq_stderr: f64,
    pub pi_time: f64,
    pub amplitude: f64,
    pub decay_time: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

pub fn fit_rabi(times: &[f64], signals: &[f64]) -> Result<RabiFit, FitFailure> {
    check_points(times, signals, 4)?;
    let n = times.len();
    let mean = signals.iter().sum::<f64>() / n as f64;
    let (tmin, tmax) = span(times);
    let dt_min = {
        let mut t = times.to_vec();
        t.sort_by(f64::total_cmp);
        t.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min)
    };
    if !dt_min.is_finite() {
        return Err(FitFailure::Singular);
    }
    // Periodogram scan from one cycle over the record to the sampling limit.
    let (f_lo, f_hi) = (1.0 / (tmax - tmin), 0.5 / dt_min);
    let steps = 4 * n;
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..=steps {
        let f = f_lo + (f_hi - f_lo) * k as f64 / steps as f64;
        let (mut c, mut s) = (0.0, 0.0);
        for (&t, &y) in times.iter().zip(signals) {
            c += (y - mean) * (TAU * f * t).cos();
            s += (y - mean) * (TAU * f * t).sin();
        }
        let p = c * c + s * s;
        if p > best.1 {
            best = (f, p);
        }
    }
    let amp0 = {
        let (lo, hi) = signals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
        0.5 * (hi - lo)
    };
    if !(amp0 > 0.0) {
        return Err(FitFailure::Singular);
    }
    let first = times
        .iter()
        .zip(signals)
        .min_by(|a, b| a.0.total_cmp(b.0))
        .map(|(_, &y)| y)
        .unwrap();
    let sign = if first >= mean { 1.0 } else { -1.0 };
    let start = [sign * amp0, best.0, 1.0 / (tmax - tmin), mean];
    let res = levenberg_marquardt(
        |p| {
            times
                .iter()
                .zip(signals)
                .map(|(&t, &y)| p[3] + p[0] * (-t * p[2]).exp() * (TAU * p[1] * t).cos() - y)
                .collect()
        },
        &start,
        &LmOptions::default(),
    )?;
    let p = &res.params;
    let f = p[1].abs();
    Ok(RabiFit {
        rabi_freq: f,
        rabi_freq_stderr: res.stderr(1),
        pi_time: 0.5 / f,
        amplitude: p[0],
        decay_time: if p[2] > 0.0 { 1.0 / p[2] } else { f64::INFINITY },
        offset: p[3],
        rms_residual: (res.cost / n as f64).sqrt(),
    })
}

fn check_points(x: &[f64], y: &[f64], params: usize) -> Result<(), FitFailure> {
    if x.len() != y.len() || x.len() < MIN_POINTS.max(params + 1) {
        return Err(FitFailure::TooFewPoints {
            points: x.len().min(y.len()),
            params,
        });
    }
    Ok(())
}

fn span(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)))
}

fn endpoint_values(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lo = x.iter().zip(y).min_by(|a, b| a.0.total_cmp(b.0)).unwrap();
    let hi = x.iter().zip(y).max_by(|a, b| a.0.total_cmp(b.0)).unwrap();
    (*lo.1, *hi.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand_distr::{Distribution, Poisson};

    fn log_delays(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn noiseless_t1() {
        let t = log_delays(1e-5, 8e-3, 25);
        let y: Vec<f64> = t.iter().map(|&t| (-t / 1e-3).exp()).collect();
        let f = fit_t1(&t, &y).unwrap();
        assert!((f.t1 - 1e-3).abs() < 1e-6 * 1e-3, "{}", f.t1);
        assert!(f.t1_ci95.0 <= 1e-3 && f.t1_ci95.1 >= 1e-3);
    }

    #[test]
    fn constant_signal_rejected() {
        let t = log_delays(1e-5, 8e-3, 10);
        assert!(fit_t1(&t, &[0.7; 10]).is_err());
        assert!(fit_rabi(&t, &[0.7; 10]).is_err());
        assert!(matches!(fit_t1(&t[..4], &[1.0, 0.5, 0.3, 0.2]), Err(FitFailure::TooFewPoints { .. })));
    }

    #[test]
    fn shot_noise_t1_range() {
        let tree = SeedTree::new(17);
        for (k, &t1) in [0.3e-3, 0.7e-3, 1.5e-3, 2.5e-3, 4e-3].iter().enumerate() {
            let t = log_delays(1e-5, 5.0 * t1, 30);
            let mut rng = tree.stream("t1", &[k as u64]);
            let n0 = 2e5;
            let y: Vec<f64> = t
                .iter()
                .map(|&t| {
                    let mean = n0 * (1.0 + 0.1 * (-t / t1).exp());
                    Poisson::new(mean).unwrap().sample(&mut rng) / n0
                })
                .collect();
            let f = fit_t1(&t, &y).unwrap();
            assert!((f.t1 - t1).abs() / t1 < 0.1, "T1 {t1}: fitted {}", f.t1);
        }
    }

    #[test]
    fn noiseless_rabi() {
        let t: Vec<f64> = (0..101).map(|i| i as f64 * 10e-9).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&t| 0.9 + 0.05 * (-t / 3e-6).exp() * (TAU * 4.2e6 * t).cos())
            .collect();
        let f = fit_rabi(&t, &y).unwrap();
        assert!((f.rabi_freq - 4.2e6).abs() < 1.0, "{f:?}");
        assert!((f.pi_time - 0.5 / 4.2e6).abs() < 1e-12);
        assert!((f.decay_time - 3e-6).abs() / 3e-6 < 1e-6);
    }
}
