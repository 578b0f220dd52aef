//! Weighted Gerchberg-Saxton iteration.

use std::f64::consts::TAU;

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{unshifted_index, Fft2, HoloError, PhasePattern};
use crate::rng::SeedTree;

/// Far-field target in centred pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotTarget {
    pub x: f64,
    pub y: f64,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotTargets {
    pub spots: Vec<SpotTarget>,
}

impl SpotTargets {
    pub fn new(spots: Vec<SpotTarget>) -> Result<Self, HoloError> {
        if spots.is_empty() {
            return Err(HoloError::InvalidTargets("no targets".into()));
        }
        for (i, s) in spots.iter().enumerate() {
            if !(s.amplitude > 0.0) || !s.x.is_finite() || !s.y.is_finite() {
                return Err(HoloError::InvalidTargets(format!("target {i} has amplitude {}", s.amplitude)));
            }
            if spots[..i].iter().any(|o| o.x == s.x && o.y == s.y) {
                return Err(HoloError::InvalidTargets(format!("target {i} duplicates ({}, {})", s.x, s.y)));
            }
        }
        Ok(Self { spots })
    }

    pub fn len(&self) -> usize {
        self.spots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spots.is_empty()
    }

    /// Pairs of targets closer than one far-field pixel.
    pub fn overlaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.spots.len() {
            for j in i + 1..self.spots.len() {
                let (a, b) = (self.spots[i], self.spots[j]);
                if (a.x - b.x).hypot(a.y - b.y) < 1.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn pixels(&self, w: usize, h: usize) -> Result<Vec<(usize, usize)>, HoloError> {
        self.spots
            .iter()
            .map(|s| {
                let (x, y) = (s.x.round(), s.y.round());
                if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                    Err(HoloError::InvalidTargets(format!("({}, {}) outside {w}x{h} far field", s.x, s.y)))
                } else {
                    Ok((x as usize, y as usize))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WgsOptions {
    pub iterations: usize,
    /// `false` runs plain Gerchberg-Saxton (all weights fixed at 1).
    pub weighted: bool,
    /// Iteration after which the far-field spot phases are frozen; `None` never freezes.
    pub fix_phase_after: Option<usize>,
    pub seed: u64,
    pub wavelength: f64,
    pub pixel_pitch: f64,
}

impl Default for WgsOptions {
    fn default() -> Self {
        Self {
            iterations: 50,
            weighted: true,
            fix_phase_after: Some(3),
            seed: 0,
            wavelength: 594e-9,
            pixel_pitch: 8e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WgsResult {
    pub pattern: PhasePattern,
    /// Achieved amplitude per target divided by its requested amplitude.
    pub amplitudes: Vec<f64>,
    /// min/max of `amplitudes`.
    pub uniformity: f64,
    /// max/min achieved amplitude ratio at the start of each iteration.
    pub ratio_history: Vec<f64>,
    pub overlaps: Vec<(usize, usize)>,
}

/// Phase mask for a uniform-amplitude aperture focusing onto `targets`.
pub fn wgs(targets: &SpotTargets, width: usize, height: usize, opts: &WgsOptions) -> Result<WgsResult, HoloError> {
    if opts.iterations == 0 {
        return Err(HoloError::InvalidTargets("iterations must be at least 1".into()));
    }
    let px = targets.pixels(width, height)?;
    let overlaps = targets.overlaps();
    for &(i, j) in &overlaps {
        log::warn!("event=wgs_overlap target_i={i} target_j={j}");
    }
    let idx: Vec<usize> = px.iter().map(|&(x, y)| unshifted_index(x, y, width, height)).collect();
    let want: Vec<f64> = targets.spots.iter().map(|s| s.amplitude).collect();
    let n = (width * height) as f64;

    let mut rng = SeedTree::new(opts.seed).stream("wgs-initial-phase", &[width as u64, height as u64]);
    let mut phases: Vec<f64> = (0..width * height).map(|_| rng.random::<f64>() * TAU).collect();
    let mut fft = Fft2::new(width, height);
    let mut field = vec![Complex64::default(); width * height];
    let mut weights = vec![1.0; idx.len()];
    let mut ratio_history = Vec::with_capacity(opts.iterations);

    let measure = |field: &[Complex64]| -> Vec<f64> {
        idx.iter()
            .zip(&want)
            .map(|(&k, &a)| field[k].norm() / n.sqrt() / a)
            .collect()
    };

    let mut fixed: Option<Vec<Complex64>> = None;
    for it in 0..opts.iterations {
        for (f, &phi) in field.iter_mut().zip(&phases) {
            *f = Complex64::from_polar(1.0, phi);
        }
        fft.forward(&mut field);
        let achieved = measure(&field);
        ratio_history.push(max(&achieved) / min(&achieved));
        if opts.weighted {
            let mean = achieved.iter().sum::<f64>() / achieved.len() as f64;
            for (w, a) in weights.iter_mut().zip(&achieved) {
                if *a > 0.0 {
                    *w *= mean / a;
                }
            }
        }
        if fixed.is_none() && opts.fix_phase_after.is_some_and(|k| it >= k) {
            fixed = Some(idx.iter().map(|&k| field[k]).collect());
        }
        let spot_phase: Vec<Complex64> = match &fixed {
            Some(f) => f.clone(),
            None => idx.iter().map(|&k| field[k]).collect(),
        };
        field.iter_mut().for_each(|f| *f = Complex64::default());
        for ((&k, z), (&w, &a)) in idx.iter().zip(spot_phase).zip(weights.iter().zip(&want)) {
            field[k] = Complex64::from_polar(w * a, z.arg());
        }
        fft.inverse(&mut field);
        for (phi, f) in phases.iter_mut().zip(&field) {
            *phi = super::wrap_phase(f.arg());
        }
    }

    for (f, &phi) in field.iter_mut().zip(&phases) {
        *f = Complex64::from_polar(1.0, phi);
    }
    fft.forward(&mut field);
    let amplitudes = measure(&field);
    let uniformity = min(&amplitudes) / max(&amplitudes);
    Ok(WgsResult {
        pattern: PhasePattern::new(width, height, phases, opts.wavelength, opts.pixel_pitch)?,
        amplitudes,
        uniformity,
        ratio_history,
        overlaps,
    })
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Intensity-weighted centroid in the (2r+1)² window around each target pixel.
pub fn spot_centroids(intensity: &[f64], width: usize, height: usize, targets: &SpotTargets, r: usize) -> Vec<(f64, f64)> {
    targets
        .spots
        .iter()
        .map(|s| {
            let (cx, cy) = (s.x.round() as i64, s.y.round() as i64);
            let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
            for y in cy - r as i64..=cy + r as i64 {
                for x in cx - r as i64..=cx + r as i64 {
                    if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                        continue;
                    }
                    let v = intensity[y as usize * width + x as usize];
                    sx += v * x as f64;
                    sy += v * y as f64;
                    sw += v;
                }
            }
            (sx / sw, sy / sw)
        })
        .collect()
}

/// `n` distinct integer targets in the central half of the far field, at
/// least `min_sep` pixels apart and away from the zero order.
pub fn random_targets(n: usize, width: usize, height: usize, min_sep: f64, seed: u64) -> SpotTargets {
    let mut rng = SeedTree::new(seed).stream("holo-targets", &[n as u64]);
    let (cx, cy) = ((width / 2) as f64, (height / 2) as f64);
    let mut spots: Vec<SpotTarget> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while spots.len() < n {
        attempts += 1;
        assert!(attempts < 1_000_000, "cannot place {n} targets with separation {min_sep}");
        let x = cx + (rng.random::<f64>() - 0.5) * width as f64 / 2.0;
        let y = cy + (rng.random::<f64>() - 0.5) * height as f64 / 2.0;
        let (x, y) = (x.round(), y.round());
        if (x - cx).hypot(y - cy) < min_sep {
            continue;
        }
        if spots.iter().all(|s| (s.x - x).hypot(s.y - y) >= min_sep) {
            spots.push(SpotTarget { x, y, amplitude: 1.0 });
        }
    }
    SpotTargets::new(spots).expect("generated targets are distinct")
}

#[cfg(test)]
mod tests {
    use super::super::{propagate, uniform_aperture};
    use super::*;

    #[test]
    fn single_centre_target() {
        let (w, h) = (64, 64);
        let t = SpotTargets::new(vec![SpotTarget {
            x: 32.0,
            y: 32.0,
            amplitude: 1.0,
        }])
        .unwrap();
        let r = wgs(&t, w, h, &WgsOptions::default()).unwrap();
        assert_eq!(r.uniformity, 1.0);
        let far = propagate(&r.pattern, &uniform_aperture(w, h)).unwrap();
        let total: f64 = far.iter().sum();
        let near: f64 = (31..=33).flat_map(|y| (31..=33).map(move |x| (x, y))).map(|(x, y)| far[y * w + x]).sum();
        assert!(near / total >= 0.9, "{}", near / total);
    }

    #[test]
    fn weighting_beats_plain_gs() {
        let t = random_targets(10, 128, 128, 4.0, 7);
        let opts = WgsOptions {
            seed: 1,
            ..WgsOptions::default()
        };
        let weighted = wgs(&t, 128, 128, &opts).unwrap();
        let plain = wgs(&t, 128, 128, &WgsOptions { weighted: false, ..opts }).unwrap();
        assert!(weighted.uniformity > plain.uniformity, "{} vs {}", weighted.uniformity, plain.uniformity);
    }

    #[test]
    fn deterministic_for_seed() {
        let t = random_targets(5, 64, 64, 3.0, 2);
        let a = wgs(&t, 64, 64, &WgsOptions::default()).unwrap();
        let b = wgs(&t, 64, 64, &WgsOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ratio_settles_after_transient() {
        for seed in 0..3 {
            let t = random_targets(15, 128, 128, 4.0, seed);
            let r = wgs(&t, 128, 128, &WgsOptions::default()).unwrap();
            for k in 5..r.ratio_history.len() - 1 {
                assert!(
                    r.ratio_history[k + 1] <= r.ratio_history[k] + 1e-12,
                    "seed {seed} iteration {k}: {:?}",
                    &r.ratio_history[k..k + 2]
                );
            }
        }
    }

    #[test]
    fn rejects_bad_targets() {
        let s = SpotTarget {
            x: 1.0,
            y: 1.0,
            amplitude: 1.0,
        };
        assert!(SpotTargets::new(vec![s, s]).is_err());
        assert!(SpotTargets::new(vec![SpotTarget { amplitude: 0.0, ..s }]).is_err());
        let far = SpotTargets::new(vec![SpotTarget { x: 99.0, ..s }]).unwrap();
        assert!(wgs(&far, 16, 16, &WgsOptions::default()).is_err());
    }

    #[test]
    fn close_targets_flagged() {
        let t = SpotTargets::new(vec![
            SpotTarget {
                x: 10.0,
                y: 10.0,
                amplitude: 1.0,
            },
            SpotTarget {
                x: 10.4,
                y: 10.0,
                amplitude: 1.0,
            },
        ])
        .unwrap();
        assert_eq!(t.overlaps(), vec![(0, 1)]);
        assert_eq!(wgs(&t, 32, 32, &WgsOptions::default()).unwrap().overlaps, vec![(0, 1)]);
    }
}
