//! Pixel-integrated 2D Gaussian localization.

use nalgebra::Matrix2;

use super::{pixel_fraction, FramesError};
use crate::lm::{levenberg_marquardt, LmOptions};

/// Rectangular pixel window `[x0, x0+nx) × [y0, y0+ny)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: i64,
    pub y0: i64,
    pub nx: usize,
    pub ny: usize,
}

impl Roi {
    /// n×n window centred on (x, y).
    pub fn around(x: f64, y: f64, n: usize) -> Self {
        let (x0, y0) = super::roi_origin(x, y, n);
        Self { x0, y0, nx: n, ny: n }
    }

    fn clip(self, width: usize, height: usize) -> Option<Self> {
        let x0 = self.x0.max(0);
        let y0 = self.y0.max(0);
        let x1 = (self.x0 + self.nx as i64).min(width as i64);
        let y1 = (self.y0 + self.ny as i64).min(height as i64);
        (x1 > x0 && y1 > y0).then(|| Self {
            x0,
            y0,
            nx: (x1 - x0) as usize,
            ny: (y1 - y0) as usize,
        })
    }
}

/// Model: `offset + total·Fx(x)·Fy(y)` with Fx, Fy the per-pixel Gaussian mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussFit {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    /// Integrated signal above the offset.
    pub total: f64,
    pub offset: f64,
    /// Covariance of (x, y).
    pub covariance: Matrix2<f64>,
    /// RMS fit residual per pixel.
    pub rms_residual: f64,
}

/// Noiseless pixel-integrated Gaussian spots on a constant offset.
pub fn gaussian_image(width: usize, height: usize, spots: &[(f64, f64, f64)], sigma: f64, offset: f64) -> Vec<f64> {
    let mut img = vec![offset; width * height];
    for &(cx, cy, total) in spots {
        let fx: Vec<f64> = (0..width as i64).map(|x| pixel_fraction(x, cx, sigma)).collect();
        for y in 0..height {
            let fy = pixel_fraction(y as i64, cy, sigma);
            if fy < 1e-300 {
                continue;
            }
            for x in 0..width {
                img[y * width + x] += total * fx[x] * fy;
            }
        }
    }
    img
}

pub fn fit_gaussian2d(image: &[f64], width: usize, height: usize, roi: Roi) -> Result<GaussFit, FramesError> {
    if image.len() != width * height {
        return Err(FramesError::FrameSize {
            found: image.len(),
            expected: width * height,
        });
    }
    let roi = roi
        .clip(width, height)
        .ok_or_else(|| FramesError::NonConvergence("window lies outside the image".into()))?;
    let mut pix = Vec::with_capacity(roi.nx * roi.ny);
    for y in roi.y0..roi.y0 + roi.ny as i64 {
        for x in roi.x0..roi.x0 + roi.nx as i64 {
            pix.push((x, y, image[y as usize * width + x as usize]));
        }
    }
    let lo = pix.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let hi = pix.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12 * hi.abs().max(1.0)) {
        return Err(FramesError::NonConvergence("flat window".into()));
    }
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for &(x, y, v) in &pix {
        let w = v - lo;
        sx += w * x as f64;
        sy += w * y as f64;
        sw += w;
    }
    let start = [sx / sw, sy / sw, 1.2, sw, lo];
    let model = |p: &[f64]| -> Vec<f64> {
        let sigma = p[2].abs().max(1e-3);
        pix.iter()
            .map(|&(x, y, v)| p[4] + p[3] * pixel_fraction(x, p[0], sigma) * pixel_fraction(y, p[1], sigma) - v)
            .collect()
    };
    let res = levenberg_marquardt(model, &start, &LmOptions::default()).map_err(|e| FramesError::NonConvergence(e.to_string()))?;
    let p = &res.params;
    let inside = |v: f64, o: i64, n: usize| v >= o as f64 - 0.5 && v < (o + n as i64) as f64 - 0.5;
    if !(p[3] > 0.0) || !inside(p[0], roi.x0, roi.nx) || !inside(p[1], roi.y0, roi.ny) {
        return Err(FramesError::NonConvergence(format!("centre ({}, {}) left the window", p[0], p[1])));
    }
    Ok(GaussFit {
        x: p[0],
        y: p[1],
        sigma: p[2].abs(),
        total: p[3],
        offset: p[4],
        covariance: Matrix2::new(
            res.covariance[(0, 0)],
            res.covariance[(0, 1)],
            res.covariance[(1, 0)],
            res.covariance[(1, 1)],
        ),
        rms_residual: (res.cost / pix.len() as f64).sqrt(),
    })
}
