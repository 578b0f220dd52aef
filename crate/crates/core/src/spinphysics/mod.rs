//! Spin observables: ODMR line shapes and sensitivity, relaxometry and Rabi
//! fits, and XY8 phase accumulation.

mod relax;
mod xy8;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constants::PhysConstants;
use crate::error::{check, InvalidField};
use crate::lm::{levenberg_marquardt, FitFailure, LmOptions};

pub use relax::{fit_rabi, fit_t1, RabiFit, T1Fit};
pub use xy8::{coherence_factor, xy8_filter, xy8_phase, AcField, CoherenceModel, XY8Config};

/// ¹⁴N hyperfine splitting of each ODMR line, Hz.
pub const HYPERFINE_SPLITTING: f64 = 2.16e6;

/// One Lorentzian dip; `fwhm` is the full width at half depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdmrDip {
    pub center: f64,
    pub fwhm: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrParams {
    pub dips: Vec<OdmrDip>,
    /// Split every dip into a ¹⁴N triplet of equal thirds.
    #[serde(default)]
    pub hyperfine: bool,
}

impl OdmrParams {
    pub fn validate(&self) -> Result<(), InvalidField> {
        for d in &self.dips {
            check(d.fwhm > 0.0, "odmr_linewidth", || format!("{} must be positive", d.fwhm))?;
            check((0.0..1.0).contains(&d.contrast), "odmr_contrast", || {
                format!("{} must lie in [0, 1)", d.contrast)
            })?;
        }
        let total: f64 = self.dips.iter().map(|d| d.contrast).sum();
        check(total < 1.0, "odmr_contrast", || format!("contrasts sum to {total}; the spectrum would reach zero"))
    }

    fn lines(&self) -> Vec<OdmrDip> {
        if !self.hyperfine {
            return self.dips.clone();
        }
        self.dips
            .iter()
            .flat_map(|d| {
                [-1.0, 0.0, 1.0].map(|k| OdmrDip {
                    center: d.center + k * HYPERFINE_SPLITTING,
                    fwhm: d.fwhm,
                    contrast: d.contrast / 3.0,
                })
            })
            .collect()
    }
}

fn lorentz(f: f64, d: &OdmrDip) -> f64 {
    let hw = 0.5 * d.fwhm;
    d.contrast * hw * hw / ((f - d.center).powi(2) + hw * hw)
}

/// Normalized fluorescence 1 − Σ Lorentzian dips.
pub fn odmr_model(params: &OdmrParams, freqs: &[f64]) -> Vec<f64> {
    let lines = params.lines();
    freqs.iter().map(|&f| 1.0 - lines.iter().map(|d| lorentz(f, d)).sum::<f64>()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrFit {
    pub dips: Vec<OdmrDip>,
    /// Standard errors of (center, fwhm, contrast) per dip.
    pub stderr: Vec<[f64; 3]>,
    /// Off-resonant signal level.
    pub baseline: f64,
    /// Off-resonant fluorescence rate, counts/s.
    pub i0: f64,
}

impl OdmrFit {
    /// Sensitivity of dip `k`.
    pub fn dc_sensitivity(&self, k: usize, constants: &PhysConstants) -> Result<f64, InvalidField> {
        let d = &self.dips[k];
        dc_sensitivity(d.fwhm, d.contrast, self.i0, constants)
    }
}

/// η = h/(gμB) · Δν / (C·√I0), in T·Hz^-1/2.
pub fn dc_sensitivity(linewidth: f64, contrast: f64, i0: f64, constants: &PhysConstants) -> Result<f64, InvalidField> {
    check(linewidth > 0.0, "linewidth", || format!("{linewidth} must be positive"))?;
    check(contrast > 0.0 && contrast < 1.0, "contrast", || format!("{contrast} must lie in (0, 1)"))?;
    check(i0 > 0.0, "i0", || format!("{i0} must be positive"))?;
    Ok(constants.field_per_hz() * linewidth / (contrast * i0.sqrt()))
}

/// Least-squares fit of `baseline·(1 − Σ dips)` with `n_dips` lines.
///
/// Starting centres are the deepest points, each excluding a window of the
/// previous dip's estimated width. `i0_scale` converts the baseline to counts/s.
pub fn fit_odmr(freqs: &[f64], signal: &[f64], n_dips: usize, i0_scale: f64) -> Result<OdmrFit, FitFailure> {
    if freqs.len() != signal.len() || n_dips == 0 {
        return Err(FitFailure::TooFewPoints {
            points: signal.len().min(freqs.len()),
            params: 3 * n_dips + 1,
        });
    }
    let base = {
        let mut s = signal.to_vec();
        s.sort_by(f64::total_cmp);
        s[(s.len() * 9) / 10]
    };
    let step = (freqs[freqs.len() - 1] - freqs[0]).abs() / (freqs.len().max(2) - 1) as f64;
    let mut masked = vec![false; freqs.len()];
    let mut start = Vec::with_capacity(3 * n_dips + 1);
    for _ in 0..n_dips {
        let (i, &v) = signal
            .iter()
            .enumerate()
            .filter(|(i, _)| !masked[*i])
            .min_by(|a, b| a.1.total_cmp(b.1))
            .ok_or(FitFailure::TooFewPoints {
                points: freqs.len(),
                params: 3 * n_dips + 1,
            })?;
        let depth = (1.0 - v / base).max(1e-4);
        let half = base * (1.0 - depth / 2.0);
        let mut l = i;
        while l > 0 && signal[l] < half {
            l -= 1;
        }
        let mut r = i;
        while r + 1 < signal.len() && signal[r] < half {
            r += 1;
        }
        let fwhm = ((freqs[r] - freqs[l]).abs()).max(2.0 * step);
        for (k, m) in masked.iter_mut().enumerate() {
            if (freqs[k] - freqs[i]).abs() < 1.5 * fwhm {
                *m = true;
            }
        }
        start.extend_from_slice(&[freqs[i], fwhm, depth]);
    }
    start.push(base);
    let residuals = |p: &[f64]| -> Vec<f64> {
        let n = (p.len() - 1) / 3;
        let b = p[p.len() - 1];
        freqs
            .iter()
            .zip(signal)
            .map(|(&f, &y)| {
                let dip: f64 = (0..n)
                    .map(|k| {
                        lorentz(
                            f,
                            &OdmrDip {
                                center: p[3 * k],
                                fwhm: p[3 * k + 1].abs(),
                                contrast: p[3 * k + 2],
                            },
                        )
                    })
                    .sum();
                b * (1.0 - dip) - y
            })
            .collect()
    };
    let res = levenberg_marquardt(residuals, &start, &LmOptions::default())?;
    let p = &res.params;
    let mut order: Vec<usize> = (0..n_dips).collect();
    order.sort_by(|&a, &b| p[3 * a].total_cmp(&p[3 * b]));
    let dips = order
        .iter()
        .map(|&k| OdmrDip {
            center: p[3 * k],
            fwhm: p[3 * k + 1].abs(),
            contrast: p[3 * k + 2],
        })
        .collect();
    let stderr = order
        .iter()
        .map(|&k| [res.stderr(3 * k), res.stderr(3 * k + 1), res.stderr(3 * k + 2)])
        .collect();
    let baseline = p[3 * n_dips];
    Ok(OdmrFit {
        dips,
        stderr,
        baseline,
        i0: baseline * i0_scale,
    })
}

/// Groups resonance frequencies into orientation families: sorted values are
/// split wherever consecutive gaps exceed `gap`. Returns a family index per
/// input, numbered by ascending frequency.
pub fn cluster_families(resonances: &[f64], gap: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..resonances.len()).collect();
    order.sort_by(|&a, &b| resonances[a].total_cmp(&resonances[b]));
    let mut labels = vec![0; resonances.len()];
    let mut fam = 0;
    for w in 0..order.len() {
        if w > 0 && resonances[order[w]] - resonances[order[w - 1]] > gap {
            fam += 1;
        }
        labels[order[w]] = fam;
    }
    labels
}

/// One row of a per-site fit table.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTableRow {
    pub site_id: u32,
    pub param: String,
    pub value: f64,
    pub stderr: f64,
}

pub const FIT_TABLE_HEADER: &str = "site_id,param,value,stderr";

pub fn write_fit_table<W: Write>(rows: &[FitTableRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{FIT_TABLE_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.site_id, r.param, r.value, r.stderr)?;
    }
    Ok(())
}
