use thiserror::Error;

use super::{poisson_pmf, poisson_support_len, PoissonMixture};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeFidelity {
    /// Balanced accuracy ½[P(k ≤ t | NV⁰) + P(k > t | NV⁻)] at the optimal threshold.
    pub fidelity: f64,
    /// Readouts with `k <= threshold` are assigned NV⁰.
    pub threshold: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FidelityError {
    #[error("lambda0 = {lambda0} must be strictly below lambda1 = {lambda1}")]
    Unordered { lambda0: f64, lambda1: f64 },
}

pub fn charge_fidelity(m: &PoissonMixture) -> Result<ChargeFidelity, FidelityError> {
    if !(m.lambda0 < m.lambda1) {
        return Err(FidelityError::Unordered {
            lambda0: m.lambda0,
            lambda1: m.lambda1,
        });
    }
    let len = poisson_support_len(m.lambda1) as u64;
    let mut cdf0 = 0.0;
    let mut cdf1 = 0.0;
    let mut best = ChargeFidelity {
        fidelity: f64::NEG_INFINITY,
        threshold: 0,
    };
    for t in 0..len {
        cdf0 += poisson_pmf(m.lambda0, t);
        cdf1 += poisson_pmf(m.lambda1, t);
        let f = 0.5 * (cdf0 + (1.0 - cdf1));
        if f > best.fidelity {
            best = ChargeFidelity {
                fidelity: f,
                threshold: t,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive scan over thresholds 0..=100, re-summing each CDF from scratch.
    fn brute_force(l0: f64, l1: f64) -> (f64, u64) {
        let mut best = (f64::NEG_INFINITY, 0);
        for t in 0..=100u64 {
            let c0: f64 = (0..=t).map(|k| poisson_pmf(l0, k)).sum();
            let c1: f64 = (0..=t).map(|k| poisson_pmf(l1, k)).sum();
            let f = 0.5 * (c0 + (1.0 - c1));
            if f > best.0 {
                best = (f, t);
            }
        }
        best
    }

    /// Same scan with a multiplicative PMF that shares no code with the crate.
    fn independent_scan(l0: f64, l1: f64) -> (f64, u64) {
        let pmf = |l: f64, k: u64| (1..=k).fold((-l).exp(), |p, j| p * l / j as f64);
        let mut best = (f64::NEG_INFINITY, 0);
        for t in 0..=100u64 {
            let c0: f64 = (0..=t).map(|k| pmf(l0, k)).sum();
            let c1: f64 = (0..=t).map(|k| pmf(l1, k)).sum();
            let f = 0.5 * (c0 + 1.0 - c1);
            if f > best.0 {
                best = (f, t);
            }
        }
        best
    }

    #[test]
    fn matches_exhaustive_scan_exactly() {
        for &(a, b) in &[(1.6, 6.7), (0.0, 3.0), (2.5, 4.0), (0.3, 12.0), (5.0, 25.0)] {
            let m = PoissonMixture::new(a, b, 0.5).unwrap();
            let got = charge_fidelity(&m).unwrap();
            let (f, t) = brute_force(a, b);
            assert_eq!(got.threshold, t, "{a} {b}");
            assert_eq!(got.fidelity, f, "{a} {b}");
            let (fi, ti) = independent_scan(a, b);
            assert_eq!(got.threshold, ti);
            assert!((got.fidelity - fi).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_pair_value() {
        let m = PoissonMixture::new(1.6, 6.7, 0.7).unwrap();
        let f = charge_fidelity(&m).unwrap();
        assert_eq!(f.threshold, 3);
        assert!((f.fidelity - 0.911_189_273_683_445_8).abs() < 1e-12, "{}", f.fidelity);
    }

    #[test]
    fn approaches_one_monotonically_for_bright_state() {
        let mut prev = 0.0;
        for l1 in [2.0, 5.0, 10.0, 20.0, 30.0] {
            let f = charge_fidelity(&PoissonMixture::new(0.0, l1, 0.5).unwrap()).unwrap().fidelity;
            assert!(f >= prev);
            prev = f;
        }
        assert!(prev >= 0.999);
    }

    #[test]
    fn equal_means_rejected() {
        let m = PoissonMixture::new(3.0, 3.0, 0.5).unwrap();
        assert!(charge_fidelity(&m).is_err());
    }
}
