//! simulate-frames, holo and baseline.

use nvmux::config::{ExperimentKind, RunConfig};
use nvmux::covariance::{calibrate_baseline, BaselineCalibration};
use nvmux::experiment::simulate_frames as render;
use nvmux::holography::{propagate, random_targets, spot_centroids, uniform_aperture, wgs, write_phas, write_png, SpotTargets};
use nvmux::{write_frames, NVSite};
use serde::Serialize;

use super::{write_json, CliError, Context};

pub fn simulate_frames(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.load(None)?;
    let dir = ctx.out_dir(Some(&cfg))?;
    log::info!(
        "event=simulate_start experiment={} sites={} seed={} repetitions={}",
        cfg.experiment.name(),
        cfg.sites.len(),
        cfg.seed,
        cfg.repetitions
    );
    let sim = render(&cfg).map_err(CliError::pipeline)?;
    let frames = dir.join("frames.nvfr");
    write_frames(&sim.stack, &frames).map_err(CliError::pipeline)?;
    log::info!(
        "event=wrote path={} n_frames={} width={} height={}",
        frames.display(),
        sim.stack.n_frames,
        sim.stack.width,
        sim.stack.height
    );
    write_json(&dir.join("frames.truth.json"), &sim.truth)
}

/// Sites for the null calibration: the configured ones when there are at
/// least two, otherwise `calibration.n_sites` default emitters.
pub fn calibration_sites(cfg: &RunConfig) -> Vec<NVSite> {
    if cfg.sites.len() >= 2 {
        cfg.sites.clone()
    } else {
        (0..cfg.calibration.n_sites as u32).map(|i| NVSite::at(i, f64::from(i), 0.0)).collect()
    }
}

pub fn run_calibration(cfg: &RunConfig) -> Result<BaselineCalibration, CliError> {
    let sites = calibration_sites(cfg);
    let cal = calibrate_baseline(&sites, cfg.calibration.n_shots, cfg.common_noise, cfg.seed ^ 0xba5e_11e0)
        .map_err(CliError::pipeline)?;
    log::info!(
        "event=baseline baseline={:e} stderr={:e} n_pairs={} n_shots={}",
        cal.baseline,
        cal.stderr,
        cal.n_pairs,
        cal.n_shots
    );
    Ok(cal)
}

pub fn baseline(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.load(Some(ExperimentKind::Baseline))?;
    let dir = ctx.out_dir(Some(&cfg))?;
    let cal = run_calibration(&cfg)?;
    write_json(&dir.join("baseline.json"), &cal)
}

#[derive(Serialize)]
struct HoloReport {
    width: usize,
    height: usize,
    n_targets: usize,
    iterations: usize,
    uniformity: f64,
    max_position_error: f64,
    amplitudes: Vec<f64>,
    ratio_history: Vec<f64>,
    overlaps: Vec<(usize, usize)>,
}

pub fn holo(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.load(Some(ExperimentKind::Holo))?;
    let dir = ctx.out_dir(Some(&cfg))?;
    let h = &cfg.holo;
    let targets = match &h.targets {
        Some(t) => SpotTargets::new(t.clone()).map_err(CliError::pipeline)?,
        None => random_targets(h.n_targets, h.width, h.height, h.min_separation, cfg.seed),
    };
    let mut opts = cfg.wgs;
    opts.seed = cfg.seed;
    let res = wgs(&targets, h.width, h.height, &opts).map_err(CliError::pipeline)?;
    let far = propagate(&res.pattern, &uniform_aperture(h.width, h.height)).map_err(CliError::pipeline)?;
    let centroids = spot_centroids(&far, h.width, h.height, &targets, 2);
    let max_err = targets
        .spots
        .iter()
        .zip(&centroids)
        .map(|(t, c)| (t.x - c.0).hypot(t.y - c.1))
        .fold(0.0, f64::max);
    log::info!(
        "event=wgs_done n_targets={} uniformity={:.6} max_position_error={:.4}",
        targets.spots.len(),
        res.uniformity,
        max_err
    );
    let phas = dir.join("phase.phas");
    write_phas(&res.pattern, &phas).map_err(CliError::pipeline)?;
    log::info!("event=wrote path={}", phas.display());
    if h.write_png {
        let png = dir.join("phase.png");
        write_png(&res.pattern, &png).map_err(CliError::pipeline)?;
        log::info!("event=wrote path={}", png.display());
    }
    write_json(
        &dir.join("holo_report.json"),
        &HoloReport {
            width: h.width,
            height: h.height,
            n_targets: targets.spots.len(),
            iterations: opts.iterations,
            uniformity: res.uniformity,
            max_position_error: max_err,
            amplitudes: res.amplitudes,
            ratio_history: res.ratio_history,
            overlaps: res.overlaps,
        },
    )
}
