//! Synthetic EMCCD frames and per-emitter signal extraction.
//!
//! Pixel `i` covers [i − 0.5, i + 0.5) in both axes, so an emitter at an
//! integer coordinate sits on a pixel centre.
//!
//! Rendering draws, for every site, an independent Poisson photon count per
//! pixel with mean `μ·∫_pixel PSF`; by Poisson splitting the site total is
//! Poisson(μ) up to the PSF mass outside the frame. Each pixel's electrons
//! then pass the EM register (Gamma(n, g)), pick up Gaussian read noise and
//! the bias, and are rounded and clamped to u16.

mod blobs;
mod extract;
mod gauss2d;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::camera::CameraModel;
use crate::error::{check, InvalidField};
use crate::nvfr::FrameStack;
use crate::rng::SeedTree;
use crate::site::NVSite;

pub use blobs::{detect_blobs, Blob, BlobOptions};
pub use extract::{
    normalize_signal, region_sum, roi_origin, threshold_count, write_extraction_csv, ExtractionRow, EXTRACTION_CSV_HEADER,
};
pub use gauss2d::{fit_gaussian2d, gaussian_image, GaussFit, Roi};

#[derive(Debug, Error, PartialEq)]
pub enum FramesError {
    #[error("site {id} at ({x}, {y}) lies outside the {width}x{height} frame")]
    SiteOutOfBounds { id: u32, x: f64, y: f64, width: usize, height: usize },
    #[error("{n}x{n} region at ({x0}, {y0}) is clipped by the {width}x{height} frame")]
    RegionClipped { x0: i64, y0: i64, n: usize, width: usize, height: usize },
    #[error("reference signal is zero")]
    ZeroReference,
    #[error("{0} photon means for {1} sites")]
    LengthMismatch(usize, usize),
    #[error("frame has {found} pixels, expected {expected}")]
    FrameSize { found: usize, expected: usize },
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error(transparent)]
    Invalid(#[from] InvalidField),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsfModel {
    /// Gaussian standard deviation, pixels.
    pub sigma_psf: f64,
    /// Multiplier on every site's photon mean (collection efficiency).
    pub amplitude: f64,
}

impl Default for PsfModel {
    fn default() -> Self {
        Self {
            sigma_psf: 1.0,
            amplitude: 1.0,
        }
    }
}

impl PsfModel {
    pub fn validate(&self) -> Result<(), InvalidField> {
        check(self.sigma_psf > 0.0 && self.sigma_psf.is_finite(), "sigma_psf", || {
            format!("{} must be positive", self.sigma_psf)
        })?;
        check(self.amplitude >= 0.0, "amplitude", || format!("{} must be non-negative", self.amplitude))
    }

    fn radius(&self) -> i64 {
        (5.0 * self.sigma_psf).ceil() as i64 + 1
    }
}

/// Fraction of a unit 1D Gaussian centred at `c` falling in pixel `i`.
pub fn pixel_fraction(i: i64, c: f64, sigma: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * sigma;
    0.5 * (erf((i as f64 + 0.5 - c) / s) - erf((i as f64 - 0.5 - c) / s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGeometry {
    pub width: usize,
    pub height: usize,
}

fn check_sites(sites: &[NVSite], means: &[f64], g: FrameGeometry) -> Result<(), FramesError> {
    if sites.len() != means.len() {
        return Err(FramesError::LengthMismatch(means.len(), sites.len()));
    }
    for s in sites {
        let (x, y) = (s.x(), s.y());
        if !(x >= -0.5 && y >= -0.5 && x < g.width as f64 - 0.5 && y < g.height as f64 - 0.5) {
            return Err(FramesError::SiteOutOfBounds {
                id: s.id,
                x,
                y,
                width: g.width,
                height: g.height,
            });
        }
    }
    Ok(())
}

/// Expected photoelectrons per pixel (no noise, no gain, no bias).
pub fn expected_photons(sites: &[NVSite], means: &[f64], psf: &PsfModel, g: FrameGeometry) -> Result<Vec<f64>, FramesError> {
    check_sites(sites, means, g)?;
    psf.validate()?;
    let mut img = vec![0.0; g.width * g.height];
    for (s, &mu) in sites.iter().zip(means) {
        for_each_pixel(s, psf, g, |idx, frac| img[idx] += mu * psf.amplitude * frac);
    }
    Ok(img)
}

fn for_each_pixel(s: &NVSite, psf: &PsfModel, g: FrameGeometry, mut f: impl FnMut(usize, f64)) {
    let (cx, cy) = (s.x(), s.y());
    let r = psf.radius();
    let (ix, iy) = (cx.round() as i64, cy.round() as i64);
    let fx: Vec<(i64, f64)> = (ix - r..=ix + r)
        .filter(|&x| x >= 0 && x < g.width as i64)
        .map(|x| (x, pixel_fraction(x, cx, psf.sigma_psf)))
        .collect();
    for y in (iy - r..=iy + r).filter(|&y| y >= 0 && y < g.height as i64) {
        let py = pixel_fraction(y, cy, psf.sigma_psf);
        for &(x, px) in &fx {
            f(y as usize * g.width + x as usize, px * py);
        }
    }
}

/// One camera frame. Streams are keyed by (frame_index, site id) and
/// (frame_index) so the result does not depend on site order or threading.
pub fn render_frame(
    sites: &[NVSite],
    means: &[f64],
    psf: &PsfModel,
    camera: &CameraModel,
    g: FrameGeometry,
    seeds: &SeedTree,
    frame_index: u64,
) -> Result<Vec<u16>, FramesError> {
    check_sites(sites, means, g)?;
    psf.validate()?;
    camera.validate()?;
    let mut electrons = vec![0u64; g.width * g.height];
    for (s, &mu) in sites.iter().zip(means) {
        let mut rng = seeds.stream("photons", &[frame_index, u64::from(s.id)]);
        for_each_pixel(s, psf, g, |idx, frac| {
            let m = mu * psf.amplitude * frac;
            if m > 0.0 {
                electrons[idx] += Poisson::new(m).map(|p| p.sample(&mut rng) as u64).unwrap_or(0);
            }
        });
    }
    let mut rng = seeds.stream("pixel-noise", &[frame_index]);
    let read = Normal::new(0.0, camera.read_noise_sigma).expect("validated read noise");
    Ok(electrons
        .into_iter()
        .map(|n| {
            let amplified = if n == 0 {
                0.0
            } else {
                Gamma::new(n as f64, camera.em_gain).expect("positive shape").sample(&mut rng)
            };
            let noise = if camera.read_noise_sigma > 0.0 { read.sample(&mut rng) } else { 0.0 };
            (camera.bias + amplified + noise).round().clamp(0.0, f64::from(u16::MAX)) as u16
        })
        .collect())
}

/// Rendered charge-readout frames with per-frame charge states drawn from
/// each site's `nv_minus_init`; photon means are λ0 (NV⁰) or λ1 (NV⁻).
pub struct ChargeFrames {
    pub stack: FrameStack,
    /// `states[f][s]` is true when site `s` was NV⁻ in frame `f`.
    pub states: Vec<Vec<bool>>,
}

pub fn simulate_charge_frames(
    sites: &[NVSite],
    psf: &PsfModel,
    camera: &CameraModel,
    g: FrameGeometry,
    n_frames: usize,
    seed: u64,
) -> Result<ChargeFrames, FramesError> {
    let seeds = SeedTree::new(seed);
    let rendered: Result<Vec<(Vec<u16>, Vec<bool>)>, FramesError> = (0..n_frames)
        .into_par_iter()
        .map(|f| {
            let states: Vec<bool> = sites
                .iter()
                .map(|s| {
                    let mut rng = seeds.stream("charge-state", &[f as u64, u64::from(s.id)]);
                    rng.random::<f64>() < s.nv_minus_init
                })
                .collect();
            let means: Vec<f64> = sites
                .iter()
                .zip(&states)
                .map(|(s, &m)| if m { s.lambda1 } else { s.lambda0 })
                .collect();
            render_frame(sites, &means, psf, camera, g, &seeds, f as u64).map(|px| (px, states))
        })
        .collect();
    let (frames, states): (Vec<_>, Vec<_>) = rendered?.into_iter().unzip();
    let stack = FrameStack::from_frames(g.width, g.height, frames)
        .expect("rendered frames match geometry")
        .with_meta(Some(*camera), Some(seed));
    Ok(ChargeFrames { stack, states })
}
