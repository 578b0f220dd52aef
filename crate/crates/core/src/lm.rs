//! Levenberg–Marquardt least squares with a forward-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitFailure {
    #[error("did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("singular normal matrix; parameters are not identifiable from the data")]
    Singular,
    #[error("need more data points ({points}) than parameters ({params})")]
    TooFewPoints { points: usize, params: usize },
    #[error("non-finite residual at the starting point")]
    BadStart,
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative change of the cost falls below this.
    pub ftol: f64,
    /// Stop when the relative parameter step falls below this.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-14,
            xtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Residual-variance-scaled covariance s²·(JᵀJ)⁻¹, s² = cost/(m − n).
    pub covariance: DMatrix<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl LmResult {
    pub fn stderr(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

fn jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, p: &[f64], r0: &[f64]) -> DMatrix<f64> {
    let (m, n) = (r0.len(), p.len());
    let mut j = DMatrix::zeros(m, n);
    let mut q = p.to_vec();
    for c in 0..n {
        let h = 1e-7 * p[c].abs().max(1e-7);
        q[c] = p[c] + h;
        let r = f(&q);
        for row in 0..m {
            j[(row, c)] = (r[row] - r0[row]) / h;
        }
        q[c] = p[c];
    }
    j
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn levenberg_marquardt(
    residuals: impl Fn(&[f64]) -> Vec<f64>,
    start: &[f64],
    opts: &LmOptions,
) -> Result<LmResult, FitFailure> {
    let f: &dyn Fn(&[f64]) -> Vec<f64> = &residuals;
    let mut p = start.to_vec();
    let mut r = f(&p);
    let (m, n) = (r.len(), p.len());
    if m <= n {
        return Err(FitFailure::TooFewPoints { points: m, params: n });
    }
    let mut c = cost(&r);
    if !c.is_finite() {
        return Err(FitFailure::BadStart);
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let j = jacobian(f, &p, &r);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..n {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-30);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let q: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rq = f(&q);
            let cq = cost(&rq);
            if cq.is_finite() && cq <= c {
                let rel_f = (c - cq) / c.max(f64::MIN_POSITIVE);
                let rel_x = step.iter().zip(&q).map(|(s, v)| s.abs() / v.abs().max(1e-12)).fold(0.0, f64::max);
                p = q;
                r = rq;
                c = cq;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_f < opts.ftol || rel_x < opts.xtol || c == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: at a minimum to working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(FitFailure::NotConverged(it));
    }
    // Column-normalized so the conditioning test ignores parameter units.
    let mut j = jacobian(f, &p, &r);
    let norms: Vec<f64> = (0..n).map(|k| j.column(k).norm()).collect();
    if norms.iter().any(|&v| !(v > 0.0)) {
        return Err(FitFailure::Singular);
    }
    for (k, &v) in norms.iter().enumerate() {
        j.column_mut(k).scale_mut(1.0 / v);
    }
    let svd = j.svd(false, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-9 * smax) {
        return Err(FitFailure::Singular);
    }
    let v_t = svd.v_t.as_ref().expect("V requested");
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let row = v_t.row(k);
        inv += row.transpose() * row / (sv[k] * sv[k]);
    }
    for a in 0..n {
        for b in 0..n {
            inv[(a, b)] /= norms[a] * norms[b];
        }
    }
    let s2 = c / (m - n) as f64;
    Ok(LmResult {
        params: p,
        covariance: inv * s2,
        cost: c,
        residuals: r,
        iterations: it,
    })
}
