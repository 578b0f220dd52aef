//! Phase-only hologram synthesis for spot arrays.
//!
//! The SLM plane and the far field are related by a single 2D DFT. Far-field
//! images are stored centred: pixel (W/2, H/2) is the zero spatial frequency.
//! Intensities are scaled by 1/(W·H) so that total far-field power equals total
//! aperture power.

mod affine;
mod export;
mod wgs;

use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use affine::{calibrate_affine, AffineFit};
pub use export::{decode_phas, encode_phas, quantize_u8, read_phas, write_phas, write_png, PHAS_MAGIC};
pub use wgs::{random_targets, spot_centroids, wgs, SpotTarget, SpotTargets, WgsOptions, WgsResult};

#[derive(Debug, Error, PartialEq)]
pub enum HoloError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("degenerate point set: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePattern {
    pub width: usize,
    pub height: usize,
    /// Row-major, wrapped to [0, 2π).
    pub phases: Vec<f64>,
    /// m
    pub wavelength: f64,
    /// m
    pub pixel_pitch: f64,
}

impl PhasePattern {
    pub fn new(width: usize, height: usize, phases: Vec<f64>, wavelength: f64, pixel_pitch: f64) -> Result<Self, HoloError> {
        if phases.len() != width * height || phases.is_empty() {
            return Err(HoloError::DimensionMismatch(format!(
                "{} phases for a {width}x{height} grid",
                phases.len()
            )));
        }
        Ok(Self {
            width,
            height,
            phases: phases.into_iter().map(wrap_phase).collect(),
            wavelength,
            pixel_pitch,
        })
    }

    pub fn flat(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height], 594e-9, 8e-6).expect("non-empty grid")
    }
}

pub fn wrap_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Planned forward/inverse 2D transforms for one grid size.
pub(crate) struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub(crate) fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
            scratch: vec![Complex64::default(); width * height],
        }
    }

    /// Unnormalized forward transform in place.
    pub(crate) fn forward(&mut self, data: &mut [Complex64]) {
        let (r, c) = (self.row_fwd.clone(), self.col_fwd.clone());
        self.apply(data, &*r, &*c);
    }

    /// Unnormalized inverse transform in place.
    pub(crate) fn inverse(&mut self, data: &mut [Complex64]) {
        let (r, c) = (self.row_inv.clone(), self.col_inv.clone());
        self.apply(data, &*r, &*c);
    }

    fn apply(&mut self, data: &mut [Complex64], row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
        let (w, h) = (self.width, self.height);
        row.process(data);
        for y in 0..h {
            for x in 0..w {
                self.scratch[x * h + y] = data[y * w + x];
            }
        }
        col.process(&mut self.scratch);
        for x in 0..w {
            for y in 0..h {
                data[y * w + x] = self.scratch[x * h + y];
            }
        }
    }
}

/// Index into an unshifted DFT array for centred far-field pixel (x, y).
pub(crate) fn unshifted_index(x: usize, y: usize, w: usize, h: usize) -> usize {
    ((y + h - h / 2) % h) * w + (x + w - w / 2) % w
}

/// Centred far-field intensity |DFT(A·e^{iφ})|² / (W·H).
pub fn propagate(p: &PhasePattern, aperture: &[f64]) -> Result<Vec<f64>, HoloError> {
    let (w, h) = (p.width, p.height);
    if aperture.len() != w * h {
        return Err(HoloError::DimensionMismatch(format!(
            "aperture has {} samples, grid is {w}x{h}",
            aperture.len()
        )));
    }
    let mut field: Vec<Complex64> = p
        .phases
        .iter()
        .zip(aperture)
        .map(|(&phi, &a)| Complex64::from_polar(a, phi))
        .collect();
    Fft2::new(w, h).forward(&mut field);
    let n = (w * h) as f64;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = field[unshifted_index(x, y, w, h)].norm_sqr() / n;
        }
    }
    Ok(out)
}

pub fn uniform_aperture(width: usize, height: usize) -> Vec<f64> {
    vec![1.0; width * height]
}
