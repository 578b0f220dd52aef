//! `analyze` modes.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nvmux::config::{ExperimentKind, RunConfig};
use nvmux::covariance::{
    fit_cos2, sigma_r_from_amplitude, simulate_driven, simulate_spectroscopy, write_correlator_csv, Baseline,
    CorrelationRecord, DrivenSequence, ShotOptions,
};
use nvmux::experiment::{
    analyze_charge, analyze_covariance, analyze_scc, analyze_spin, site_counts, sweep_of, write_charge_csv,
    write_scc_csv, SiteFailure, Truth,
};
use nvmux::frames::{write_extraction_csv, ExtractionRow};
use nvmux::photonstats::DEFAULT_BOOTSTRAP_RESAMPLES;
use nvmux::spinphysics::write_fit_table;
use nvmux::{read_frames, FrameStack, PhysConstants, SpinPrep};
use serde::Serialize;

use super::simulate::run_calibration;
use super::{read_json, write_file, write_json, CliError, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Odmr,
    Rabi,
    T1,
    Charge,
    Scc,
    Covariance,
}

fn truth_path(frames: &Path) -> PathBuf {
    frames.with_extension("truth.json")
}

/// Frame layout from the sidecar when present, else from the config.
fn layout(frames: &Path, truth: Option<PathBuf>, cfg: Option<&RunConfig>) -> Result<Truth, CliError> {
    let p = truth.unwrap_or_else(|| truth_path(frames));
    if p.exists() {
        return read_json(&p);
    }
    match cfg {
        Some(c) => Truth::from_config(c).map_err(CliError::pipeline),
        None => Err(CliError::Usage(format!(
            "no sidecar at {} and no --config describing the frame layout",
            p.display()
        ))),
    }
}

fn report_failures(mode: &str, failed: &[SiteFailure]) {
    for f in failed {
        log::warn!("event=site_failed mode={mode} site_id={} reason=\"{}\"", f.site_id, f.reason);
    }
}

fn load_frames(p: &Path) -> Result<FrameStack, CliError> {
    let s = read_frames(p).map_err(|e| CliError::Pipeline(format!("{}: {e}", p.display())))?;
    log::info!("event=read path={} n_frames={} width={} height={}", p.display(), s.n_frames, s.width, s.height);
    Ok(s)
}

pub fn analyze(ctx: &Context, mode: AnalyzeMode, frames: Option<PathBuf>, truth: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = match &ctx.config {
        Some(_) => Some(ctx.load(None)?),
        None => None,
    };
    let dir = ctx.out_dir(cfg.as_ref())?;
    if mode == AnalyzeMode::Covariance && frames.is_none() {
        let cfg = cfg.ok_or_else(|| CliError::Usage("covariance without --frames needs --config".into()))?;
        return covariance_shots(&cfg, &dir);
    }
    let frames = frames.ok_or_else(|| CliError::Usage("--frames is required for this mode".into()))?;
    let stack = load_frames(&frames)?;
    let layout = layout(&frames, truth, cfg.as_ref())?;
    match mode {
        AnalyzeMode::Charge => {
            let (rows, failed) = analyze_charge(&stack, &layout.sites, &layout.camera);
            report_failures("charge", &failed);
            for r in &rows {
                log::info!(
                    "event=charge_fit site_id={} w_minus={:.4} fidelity={:.4} threshold={}",
                    r.site_id,
                    r.w_minus,
                    r.fidelity,
                    r.threshold
                );
            }
            write_file(&dir.join("charge_fit.csv"), |w| write_charge_csv(&rows, w))?;
            let mut extraction = Vec::new();
            for s in &layout.sites {
                if let Ok(c) = site_counts(&stack, s, &layout.camera) {
                    extraction.extend(c.iter().enumerate().map(|(f, &v)| ExtractionRow {
                        frame_index: f,
                        site_id: s.id,
                        signal: f64::from(v),
                        c_ref: None,
                        c_norm: None,
                    }));
                }
            }
            extraction.sort_by_key(|r| (r.frame_index, r.site_id));
            write_file(&dir.join("extraction.csv"), |w| write_extraction_csv(&extraction, w))
        }
        AnalyzeMode::Scc => {
            let (rows, failed) = analyze_scc(&stack, &layout, DEFAULT_BOOTSTRAP_RESAMPLES).map_err(CliError::pipeline)?;
            report_failures("scc", &failed);
            write_file(&dir.join("scc_sigma_r.csv"), |w| write_scc_csv(&rows, w))
        }
        AnalyzeMode::Odmr | AnalyzeMode::Rabi | AnalyzeMode::T1 => {
            let (rows, failed) = analyze_spin(&stack, &layout).map_err(CliError::pipeline)?;
            let name = layout.experiment.name();
            report_failures(name, &failed);
            write_file(&dir.join(format!("{name}_fits.csv")), |w| write_fit_table(&rows, w))
        }
        AnalyzeMode::Covariance => {
            let baseline = cfg
                .as_ref()
                .and_then(|c| c.baseline.map(|b| Baseline::new(b, c.baseline_stderr)))
                .unwrap_or_default();
            let recs = analyze_covariance(&stack, &layout, &baseline).map_err(CliError::pipeline)?;
            write_correlators(&dir, &recs)
        }
    }
}

fn write_correlators(dir: &Path, recs: &[CorrelationRecord]) -> Result<(), CliError> {
    write_file(&dir.join("correlators.csv"), |w| write_correlator_csv(w, recs))
}

#[derive(Serialize)]
struct DrivenSummary {
    amplitude: f64,
    amplitude_stderr: f64,
    theta0: f64,
    sigma_r: Option<f64>,
    baseline: Baseline,
}

/// Shot-level simulation path: no frames are rendered.
fn covariance_shots(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let baseline = match cfg.baseline {
        Some(b) => Baseline::new(b, cfg.baseline_stderr),
        None => run_calibration(cfg)?.into(),
    };
    let opts = ShotOptions {
        n_shots: cfg.repetitions,
        common_noise: cfg.common_noise,
        baseline,
    };
    let sweep = sweep_of(cfg);
    match cfg.experiment {
        ExperimentKind::Driven => {
            let seqs = sweep
                .iter()
                .map(|&t| DrivenSequence::new(t))
                .collect::<Result<Vec<_>, _>>()
                .map_err(CliError::pipeline)?;
            let recs = simulate_driven(&cfg.sites, &seqs, &opts, cfg.seed).map_err(CliError::pipeline)?;
            write_correlators(dir, &recs)?;
            let opposite = |id: u32| cfg.sites.iter().any(|s| s.id == id && s.spin_prep == SpinPrep::Opposite);
            let series: Vec<(f64, Vec<f64>)> = pairs(&recs)
                .into_iter()
                .map(|(i, j)| {
                    let sign = if opposite(i) != opposite(j) { -1.0 } else { 1.0 };
                    let v = recs.iter().filter(|r| (r.site_i, r.site_j) == (i, j)).map(|r| r.r_corr).collect();
                    (sign, v)
                })
                .collect();
            let refs: Vec<(f64, &[f64])> = series.iter().map(|(s, v)| (*s, v.as_slice())).collect();
            let fit = fit_cos2(&sweep, &refs).map_err(CliError::pipeline)?;
            let sigma_r = sigma_r_from_amplitude(fit.amplitude).ok();
            log::info!(
                "event=driven_fit amplitude={:e} stderr={:e} theta0={:.4} sigma_r={}",
                fit.amplitude,
                fit.amplitude_stderr,
                fit.theta0,
                sigma_r.map_or("nan".into(), |s| format!("{s:.3}"))
            );
            write_json(
                &dir.join("driven_fit.json"),
                &DrivenSummary {
                    amplitude: fit.amplitude,
                    amplitude_stderr: fit.amplitude_stderr,
                    theta0: fit.theta0,
                    sigma_r,
                    baseline,
                },
            )
        }
        ExperimentKind::Spectroscopy => {
            let mut sc = cfg.spectroscopy.clone();
            sc.frequencies = sweep;
            let recs = simulate_spectroscopy(&cfg.sites, &sc, &opts, &PhysConstants::default(), cfg.seed)
                .map_err(CliError::pipeline)?;
            write_correlators(dir, &recs)
        }
        k => Err(CliError::Usage(format!(
            "covariance without --frames simulates driven or spectroscopy experiments, not {}",
            k.name()
        ))),
    }
}

fn pairs(recs: &[CorrelationRecord]) -> Vec<(u32, u32)> {
    let mut p: Vec<(u32, u32)> = recs.iter().map(|r| (r.site_i, r.site_j)).collect();
    p.sort_unstable();
    p.dedup();
    p
}
