//! Least-squares affine map between commanded and measured spot positions.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use super::HoloError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    /// `measured ≈ [[a, b, tx], [c, d, ty]] · [x, y, 1]`
    pub matrix: [[f64; 3]; 2],
    /// Measured minus mapped, per point.
    pub residuals: Vec<[f64; 2]>,
    /// Per-axis RMS residual, sqrt(Σ(dx² + dy²) / 2n).
    pub rms_residual: f64,
}

impl AffineFit {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }
}

pub fn calibrate_affine(commanded: &[[f64; 2]], measured: &[[f64; 2]]) -> Result<AffineFit, HoloError> {
    if commanded.len() != measured.len() {
        return Err(HoloError::DimensionMismatch(format!(
            "{} commanded vs {} measured points",
            commanded.len(),
            measured.len()
        )));
    }
    let n = commanded.len();
    if n < 3 {
        return Err(HoloError::Degenerate(format!("{n} points; need at least 3")));
    }
    let (mx, my) = (
        commanded.iter().map(|p| p[0]).sum::<f64>() / n as f64,
        commanded.iter().map(|p| p[1]).sum::<f64>() / n as f64,
    );
    let mut scatter = Matrix2::zeros();
    for p in commanded {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        scatter += Matrix2::new(dx * dx, dx * dy, dx * dy, dy * dy);
    }
    let ev = scatter.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(HoloError::Degenerate("commanded points are collinear".into()));
    }
    let a = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => commanded[i][0] - mx,
        1 => commanded[i][1] - my,
        _ => 1.0,
    });
    let svd = a.svd(true, true);
    let mut matrix = [[0.0; 3]; 2];
    for (axis, row) in matrix.iter_mut().enumerate() {
        let b = DVector::from_iterator(n, measured.iter().map(|p| p[axis]));
        let sol = svd.solve(&b, 1e-14).map_err(|e| HoloError::Degenerate(e.to_string()))?;
        // Undo the centring of the commanded coordinates.
        *row = [sol[0], sol[1], sol[2] - sol[0] * mx - sol[1] * my];
    }
    let mut fit = AffineFit {
        matrix,
        residuals: Vec::with_capacity(n),
        rms_residual: 0.0,
    };
    let mut ss = 0.0;
    for (c, m) in commanded.iter().zip(measured) {
        let q = fit.apply(*c);
        let r = [m[0] - q[0], m[1] - q[1]];
        ss += r[0] * r[0] + r[1] * r[1];
        fit.residuals.push(r);
    }
    fit.rms_residual = (ss / (2 * n) as f64).sqrt();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn points(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = SeedTree::new(seed).stream("affine-points", &[]);
        (0..n).map(|_| [rng.random::<f64>() * 500.0, rng.random::<f64>() * 500.0]).collect()
    }

    #[test]
    fn identity() {
        let p = points(6, 1);
        let f = calibrate_affine(&p, &p).unwrap();
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        for r in 0..2 {
            for c in 0..3 {
                assert!((f.matrix[r][c] - id[r][c]).abs() < 1e-12);
            }
        }
        assert!(f.rms_residual < 1e-12);
    }

    #[test]
    fn rotation_and_scale_recovered() {
        let (th, s, tx, ty) = (0.3f64, 1.7, 12.5, -4.25);
        let want = [[s * th.cos(), -s * th.sin(), tx], [s * th.sin(), s * th.cos(), ty]];
        let p = points(10, 2);
        let q: Vec<[f64; 2]> = p
            .iter()
            .map(|v| {
                [
                    want[0][0] * v[0] + want[0][1] * v[1] + tx,
                    want[1][0] * v[0] + want[1][1] * v[1] + ty,
                ]
            })
            .collect();
        let f = calibrate_affine(&p, &q).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((f.matrix[r][c] - want[r][c]).abs() < 1e-10, "{:?}", f.matrix);
            }
        }
    }

    #[test]
    fn noisy_residual_matches_noise_level() {
        let p = points(2000, 3);
        let mut rng = SeedTree::new(4).stream("affine-noise", &[]);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let q: Vec<[f64; 2]> = p
            .iter()
            .map(|v| [v[0] + 3.0 + noise.sample(&mut rng), v[1] - 1.0 + noise.sample(&mut rng)])
            .collect();
        let f = calibrate_affine(&p, &q).unwrap();
        assert!((f.rms_residual - 0.1).abs() < 0.005, "{}", f.rms_residual);
    }

    #[test]
    fn collinear_rejected() {
        let p: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 2.0 * i as f64 + 1.0]).collect();
        assert!(matches!(calibrate_affine(&p, &p), Err(HoloError::Degenerate(_))));
        assert!(matches!(
            calibrate_affine(&p[..2], &p[..2]),
            Err(HoloError::Degenerate(_))
        ));
    }
}
