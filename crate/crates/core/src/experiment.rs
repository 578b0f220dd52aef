//! Frame-level experiment simulation and the matching analysis pipelines.
//!
//! Frames are ordered sweep point, then repetition, then sub-frame: frame
//! `((p·reps + r)·per_shot + sub)`. Fluorescence experiments (ODMR, Rabi,
//! T1) record a signal frame followed by a reference frame; every other kind
//! records one frame per shot.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::config::{ExperimentKind, RunConfig};
use crate::constants::PhysConstants;
use crate::covariance::{Baseline, CorrelationRecord, CovAccumulator, CovarianceError, DrivenSequence, SccReadout};
use crate::error::InvalidField;
use crate::frames::{normalize_signal, region_sum, render_frame, threshold_count, FrameGeometry, FramesError, PsfModel};
use crate::nvfr::FrameStack;
use crate::photonstats::{charge_fidelity, fit_double_poisson, sigma_r_from_samples, FitOptions, Histogram};
use crate::rateq::log_grid;
use crate::rng::SeedTree;
use crate::site::NVSite;
use crate::spinphysics::{
    coherence_factor, dc_sensitivity, fit_odmr, fit_rabi, fit_t1, odmr_model, CoherenceModel, FitTableRow, OdmrDip,
    OdmrParams,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiment {0} does not render frames")]
    NotAFrameExperiment(&'static str),
    #[error("frame stack holds {found} frames, layout expects {expected}")]
    Layout { found: usize, expected: usize },
    #[error(transparent)]
    Frames(#[from] FramesError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Invalid(#[from] InvalidField),
}

/// Ground truth written next to a synthetic frame stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub camera: CameraModel,
    pub psf: PsfModel,
    pub sites: Vec<NVSite>,
    pub sweep: Vec<f64>,
    pub repetitions: u64,
    pub frames_per_shot: usize,
    /// Fraction of frames in which each site was NV⁻.
    pub realized_w_minus: Vec<f64>,
    /// SCC populations per site, for kinds that use spin-to-charge readout.
    pub scc: Option<Vec<SccReadout>>,
    /// Per site, one character per frame: `1` when NV⁻, `0` when NV⁰.
    /// Empty for fluorescence kinds.
    #[serde(default)]
    pub charge_states: Vec<String>,
}

impl Truth {
    /// Layout description for frames recorded under `cfg` (no realized states).
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ExperimentError> {
        let kind = cfg.experiment;
        if !kind.renders_frames() {
            return Err(ExperimentError::NotAFrameExperiment(kind.name()));
        }
        let per_shot = if matches!(kind, ExperimentKind::Odmr | ExperimentKind::Rabi | ExperimentKind::T1) {
            2
        } else {
            1
        };
        Ok(Self {
            experiment: kind,
            seed: cfg.seed,
            width: cfg.geometry.width,
            height: cfg.geometry.height,
            camera: cfg.camera,
            psf: cfg.psf,
            sites: cfg.sites.clone(),
            sweep: sweep_of(cfg),
            repetitions: cfg.repetitions,
            frames_per_shot: per_shot,
            realized_w_minus: Vec::new(),
            scc: None,
            charge_states: Vec::new(),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.sweep.len() * self.repetitions as usize * self.frames_per_shot
    }

    pub fn frame_index(&self, point: usize, rep: usize, sub: usize) -> usize {
        (point * self.repetitions as usize + rep) * self.frames_per_shot + sub
    }

    fn check(&self, stack: &FrameStack) -> Result<(), ExperimentError> {
        if stack.n_frames != self.n_frames() {
            return Err(ExperimentError::Layout {
                found: stack.n_frames,
                expected: self.n_frames(),
            });
        }
        Ok(())
    }
}

pub struct SimulatedFrames {
    pub stack: FrameStack,
    pub truth: Truth,
}

/// Sweep used when the config gives none.
pub fn default_sweep(kind: ExperimentKind) -> Vec<f64> {
    match kind {
        ExperimentKind::Odmr => (0..=100).map(|i| 2.82e9 + 1e6 * i as f64).collect(),
        ExperimentKind::Rabi => (0..=40).map(|i| 10e-9 * i as f64).collect(),
        ExperimentKind::T1 => log_grid(10e-6, 8e-3, 15),
        ExperimentKind::Driven => (0..120).map(|i| TAU * i as f64 / 120.0).collect(),
        ExperimentKind::Spectroscopy => crate::covariance::SpectroscopyConfig::default().frequencies,
        ExperimentKind::Scc => vec![0.0, 1.0],
        ExperimentKind::MultiplexScaling => (1..=30).map(f64::from).collect(),
        ExperimentKind::SccOpt => crate::rateq::default_t_grid(),
        ExperimentKind::WgsBench => vec![5.0, 10.0, 15.0, 20.0, 30.0],
        _ => vec![0.0],
    }
}

pub fn sweep_of(cfg: &RunConfig) -> Vec<f64> {
    cfg.sweep.clone().unwrap_or_else(|| match cfg.experiment {
        ExperimentKind::Spectroscopy => cfg.spectroscopy.frequencies.clone(),
        k => default_sweep(k),
    })
}

/// Relative fluorescence of a site under a fluorescence experiment at sweep value `x`.
fn brightness(kind: ExperimentKind, s: &NVSite, x: f64) -> f64 {
    match kind {
        ExperimentKind::Odmr => {
            let p = OdmrParams {
                dips: vec![OdmrDip {
                    center: s.odmr_center,
                    fwhm: s.odmr_linewidth,
                    contrast: s.odmr_contrast,
                }],
                hyperfine: false,
            };
            odmr_model(&p, &[x])[0]
        }
        ExperimentKind::Rabi => 1.0 - s.odmr_contrast * (PI * s.rabi_freq * x).sin().powi(2),
        ExperimentKind::T1 => 1.0 - s.odmr_contrast * (2.0 / 3.0) * (1.0 - (-x / s.t1).exp()),
        _ => 1.0,
    }
}

pub fn simulate_frames(cfg: &RunConfig) -> Result<SimulatedFrames, ExperimentError> {
    let kind = cfg.experiment;
    cfg.validate()?;
    let layout = Truth::from_config(cfg)?;
    let sweep = layout.sweep.clone();
    let sites = &cfg.sites;
    let per_shot = layout.frames_per_shot;
    let fluorescence = per_shot == 2;
    let scc = match kind {
        ExperimentKind::Scc | ExperimentKind::Driven | ExperimentKind::Spectroscopy => {
            Some(sites.iter().map(SccReadout::for_site).collect::<Result<Vec<_>, _>>()?)
        }
        _ => None,
    };
    let constants = PhysConstants::default();
    let t_seq = cfg.spectroscopy.xy8.total_time();
    let coherence: Vec<f64> = sites
        .iter()
        .map(|s| {
            coherence_factor(
                &CoherenceModel {
                    t2: s.t2_xy8,
                    exponent: cfg.spectroscopy.coherence_exponent,
                },
                t_seq,
            )
        })
        .collect();
    let gamma_b = constants.gyromagnetic_ratio() * cfg.spectroscopy.ac_amplitude;
    let g: FrameGeometry = cfg.geometry.into();
    let seeds = SeedTree::new(cfg.seed);
    let reps = cfg.repetitions as usize;
    let n_frames = sweep.len() * reps * per_shot;

    let rendered: Result<Vec<(Vec<u16>, Vec<bool>)>, FramesError> = (0..n_frames)
        .into_par_iter()
        .map(|f| {
            let sub = f % per_shot;
            let shot = f / per_shot;
            let (p, r) = (shot / reps, shot % reps);
            let x = sweep[p];
            let mut minus = vec![false; sites.len()];
            let means: Vec<f64> = if fluorescence {
                sites
                    .iter()
                    .map(|s| {
                        let n = s.fluorescence_rate * cfg.camera.exposure;
                        if sub == 0 {
                            n * brightness(kind, s, x)
                        } else {
                            n
                        }
                    })
                    .collect()
            } else {
                // Spin flip probability per site, then the charge draw.
                let p1: Vec<f64> = match kind {
                    ExperimentKind::Charge => vec![f64::NAN; sites.len()],
                    ExperimentKind::Scc => vec![x.clamp(0.0, 1.0); sites.len()],
                    ExperimentKind::Driven => {
                        let seq = DrivenSequence { theta: x };
                        sites.iter().map(|s| seq.flip_probability(r as u64, s.spin_prep)).collect()
                    }
                    ExperimentKind::Spectroscopy => {
                        let (re, im) = cfg.spectroscopy.xy8.response(x, 0.0);
                        let psi = seeds.stream("ac-phase", &[f as u64]).random::<f64>() * TAU;
                        let sin_phi = (gamma_b * (re * psi.cos() - im * psi.sin())).sin();
                        sites
                            .iter()
                            .zip(&coherence)
                            .map(|(s, c)| 0.5 * (1.0 - s.spin_prep.sign() * c * sin_phi))
                            .collect()
                    }
                    _ => unreachable!("fluorescence kinds handled above"),
                };
                sites
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let mut rng = seeds.stream("charge-state", &[f as u64, u64::from(s.id)]);
                        let q = match &scc {
                            None => s.nv_minus_init,
                            Some(sc) => {
                                let ms1 = rng.random::<f64>() < p1[i];
                                if ms1 {
                                    sc[i].q_ms1
                                } else {
                                    sc[i].q_ms0
                                }
                            }
                        };
                        minus[i] = rng.random::<f64>() < q;
                        if minus[i] {
                            s.lambda1
                        } else {
                            s.lambda0
                        }
                    })
                    .collect()
            };
            render_frame(sites, &means, &cfg.psf, &cfg.camera, g, &seeds, f as u64).map(|px| (px, minus))
        })
        .collect();
    let (frames, states): (Vec<_>, Vec<_>) = rendered?.into_iter().unzip();
    let realized_w_minus = (0..sites.len())
        .map(|i| states.iter().filter(|s| s[i]).count() as f64 / n_frames as f64)
        .collect();
    let charge_states = if fluorescence {
        Vec::new()
    } else {
        (0..sites.len())
            .map(|i| states.iter().map(|s| if s[i] { '1' } else { '0' }).collect())
            .collect()
    };
    let stack = FrameStack::from_frames(g.width, g.height, frames)
        .expect("rendered frames match geometry")
        .with_meta(Some(cfg.camera), Some(cfg.seed));
    Ok(SimulatedFrames {
        stack,
        truth: Truth {
            realized_w_minus,
            scc,
            charge_states,
            ..layout
        },
    })
}

/// A site the pipeline skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteFailure {
    pub site_id: u32,
    pub reason: String,
}

fn per_site<T: Send>(
    sites: &[NVSite],
    f: impl Fn(&NVSite) -> Result<T, String> + Sync,
) -> (Vec<(u32, T)>, Vec<SiteFailure>) {
    let results: Vec<(u32, Result<T, String>)> = sites.par_iter().map(|s| (s.id, f(s))).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(reason) => failed.push(SiteFailure { site_id: id, reason }),
        }
    }
    (ok, failed)
}

/// Thresholded photon count of `site` in every frame.
pub fn site_counts(stack: &FrameStack, site: &NVSite, camera: &CameraModel) -> Result<Vec<u32>, FramesError> {
    stack
        .frames()
        .map(|fr| threshold_count(fr, stack.width, stack.height, site.x(), site.y(), camera))
        .collect()
}

/// Bias-subtracted region sum in photoelectrons for every frame.
pub fn site_photons(stack: &FrameStack, site: &NVSite, camera: &CameraModel) -> Result<Vec<f64>, FramesError> {
    let n = camera.roi_n;
    let pedestal = camera.bias * (n * n) as f64;
    stack
        .frames()
        .map(|fr| {
            region_sum(fr, stack.width, stack.height, site.x(), site.y(), n)
                .map(|s| (s as f64 - pedestal) / camera.em_gain)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeRow {
    pub site_id: u32,
    pub lambda0: f64,
    pub lambda1: f64,
    pub w_minus: f64,
    pub w_minus_stderr: f64,
    pub fidelity: f64,
    pub threshold: u64,
    pub degenerate: bool,
}

pub const CHARGE_CSV_HEADER: &str = "site_id,lambda0,lambda1,w_minus,w_minus_stderr,fidelity,threshold,degenerate";

pub fn analyze_charge(stack: &FrameStack, sites: &[NVSite], camera: &CameraModel) -> (Vec<ChargeRow>, Vec<SiteFailure>) {
    let (rows, failed) = per_site(sites, |s| {
        let counts = site_counts(stack, s, camera).map_err(|e| e.to_string())?;
        let fit = fit_double_poisson(&Histogram::from_samples(counts), &FitOptions::default()).map_err(|e| e.to_string())?;
        let fid = charge_fidelity(&fit.mixture).map_err(|e| e.to_string())?;
        Ok(ChargeRow {
            site_id: s.id,
            lambda0: fit.mixture.lambda0,
            lambda1: fit.mixture.lambda1,
            w_minus: fit.mixture.w_minus,
            w_minus_stderr: fit.stderr[2],
            fidelity: fid.fidelity,
            threshold: fid.threshold,
            degenerate: fit.degenerate,
        })
    });
    (rows.into_iter().map(|(_, r)| r).collect(), failed)
}

pub fn write_charge_csv<W: Write>(rows: &[ChargeRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CHARGE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.site_id, r.lambda0, r.lambda1, r.w_minus, r.w_minus_stderr, r.fidelity, r.threshold, r.degenerate
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SccRow {
    pub site_id: u32,
    pub sigma_r: f64,
    pub stderr: f64,
}

pub const SCC_CSV_HEADER: &str = "site_id,sigma_r,stderr";

/// σ_R per site from the no-π (first sweep point) and π (second) frame blocks.
pub fn analyze_scc(stack: &FrameStack, truth: &Truth, resamples: usize) -> Result<(Vec<SccRow>, Vec<SiteFailure>), ExperimentError> {
    truth.check(stack)?;
    let reps = truth.repetitions as usize;
    if truth.sweep.len() < 2 {
        return Err(InvalidField::new("sweep", "scc analysis needs a no-π and a π block").into());
    }
    let (rows, failed) = per_site(&truth.sites, |s| {
        let c = site_counts(stack, s, &truth.camera).map_err(|e| e.to_string())?;
        let no_pi: Vec<u32> = (0..reps).map(|r| c[truth.frame_index(0, r, 0)]).collect();
        let pi: Vec<u32> = (0..reps).map(|r| c[truth.frame_index(1, r, 0)]).collect();
        let est = sigma_r_from_samples(&no_pi, &pi, resamples, truth.seed ^ u64::from(s.id)).map_err(|e| e.to_string())?;
        Ok(SccRow {
            site_id: s.id,
            sigma_r: est.sigma_r,
            stderr: est.stderr,
        })
    });
    Ok((rows.into_iter().map(|(_, r)| r).collect(), failed))
}

pub fn write_scc_csv<W: Write>(rows: &[SccRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SCC_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.site_id, r.sigma_r, r.stderr)?;
    }
    Ok(())
}

/// Reference-normalized signal per sweep point, averaged over repetitions.
pub fn normalized_curve(stack: &FrameStack, truth: &Truth, site: &NVSite) -> Result<(Vec<f64>, f64), ExperimentError> {
    truth.check(stack)?;
    let ph = site_photons(stack, site, &truth.camera)?;
    let reps = truth.repetitions as usize;
    let mut ref_total = 0.0;
    let mut curve = Vec::with_capacity(truth.sweep.len());
    for p in 0..truth.sweep.len() {
        let mut acc = 0.0;
        for r in 0..reps {
            let (sig, rf) = (ph[truth.frame_index(p, r, 0)], ph[truth.frame_index(p, r, 1)]);
            acc += normalize_signal(sig, rf)?;
            ref_total += rf;
        }
        curve.push(acc / reps as f64);
    }
    Ok((curve, ref_total / (truth.sweep.len() * reps) as f64))
}

fn row(site_id: u32, param: &str, value: f64, stderr: f64) -> FitTableRow {
    FitTableRow {
        site_id,
        param: param.into(),
        value,
        stderr,
    }
}

/// Per-site ODMR, Rabi or T1 fit table.
pub fn analyze_spin(stack: &FrameStack, truth: &Truth) -> Result<(Vec<FitTableRow>, Vec<SiteFailure>), ExperimentError> {
    truth.check(stack)?;
    if truth.frames_per_shot != 2 {
        return Err(ExperimentError::NotAFrameExperiment(truth.experiment.name()));
    }
    let constants = PhysConstants::default();
    let (rows, failed) = per_site(&truth.sites, |s| {
        let (y, ref_photons) = normalized_curve(stack, truth, s).map_err(|e| e.to_string())?;
        let x = &truth.sweep;
        let id = s.id;
        match truth.experiment {
            ExperimentKind::Odmr => {
                let i0_scale = ref_photons / truth.camera.exposure;
                let f = fit_odmr(x, &y, 1, i0_scale).map_err(|e| e.to_string())?;
                let (d, e) = (f.dips[0], f.stderr[0]);
                let eta = dc_sensitivity(d.fwhm, d.contrast, f.i0, &constants).map_err(|e| e.to_string())?;
                // First-order propagation of the width and contrast errors.
                let eta_se = eta * ((e[1] / d.fwhm).powi(2) + (e[2] / d.contrast).powi(2)).sqrt();
                Ok(vec![
                    row(id, "center", d.center, e[0]),
                    row(id, "linewidth", d.fwhm, e[1]),
                    row(id, "contrast", d.contrast, e[2]),
                    row(id, "i0", f.i0, f64::NAN),
                    row(id, "dc_sensitivity", eta, eta_se),
                ])
            }
            ExperimentKind::Rabi => {
                let f = fit_rabi(x, &y).map_err(|e| e.to_string())?;
                Ok(vec![
                    row(id, "rabi_freq", f.rabi_freq, f.rabi_freq_stderr),
                    row(id, "pi_time", f.pi_time, f.pi_time * f.rabi_freq_stderr / f.rabi_freq),
                    row(id, "rms_residual", f.rms_residual, f64::NAN),
                ])
            }
            ExperimentKind::T1 => {
                let f = fit_t1(x, &y).map_err(|e| e.to_string())?;
                Ok(vec![
                    row(id, "t1", f.t1, f.t1_stderr),
                    row(id, "rms_residual", f.rms_residual, f64::NAN),
                ])
            }
            k => Err(format!("{} is not a spin-fit experiment", k.name())),
        }
    });
    Ok((rows.into_iter().flat_map(|(_, r)| r).collect(), failed))
}

/// Pair correlators of thresholded counts per sweep point.
pub fn analyze_covariance(stack: &FrameStack, truth: &Truth, baseline: &Baseline) -> Result<Vec<CorrelationRecord>, ExperimentError> {
    truth.check(stack)?;
    let counts = truth
        .sites
        .par_iter()
        .map(|s| site_counts(stack, s, &truth.camera))
        .collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<u32> = truth.sites.iter().map(|s| s.id).collect();
    let reps = truth.repetitions as usize;
    let mut out = Vec::new();
    let mut row = vec![0.0; ids.len()];
    for (p, &x) in truth.sweep.iter().enumerate() {
        let mut acc = CovAccumulator::new(ids.len());
        for r in 0..reps {
            let f = truth.frame_index(p, r, 0);
            for (v, c) in row.iter_mut().zip(&counts) {
                *v = f64::from(c[f]);
            }
            acc.push(&row);
        }
        out.extend(acc.records(&ids, x, baseline)?);
    }
    Ok(out)
}
