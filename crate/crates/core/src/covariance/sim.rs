//! Shot-level Monte Carlo for the driven-spin and XY8 correlation experiments.
//!
//! Each shot projects every spin, draws its photon count from the SCC
//! readout mixture of the projected state and multiplies all channels by one
//! common gain N ~ Normal(1, σ_N). Shots are generated in fixed-size chunks,
//! each on its own stream, and chunk accumulators are merged in chunk order so
//! results do not depend on the thread count.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Baseline, BackgroundModel, BaselineCalibration, CorrelationRecord, CovAccumulator, CovarianceError};
use crate::constants::PhysConstants;
use crate::error::{check, InvalidField};
use crate::photonstats::{readout_noise, PoissonMixture};
use crate::rng::{SeedTree, StreamRng};
use crate::site::{NVSite, SpinPrep};
use crate::spinphysics::{coherence_factor, CoherenceModel, XY8Config};

/// σ_N putting the null-calibration baseline near 2e-3 for default sites.
pub const DEFAULT_COMMON_NOISE: f64 = 0.028;

const CHUNK: u64 = 8192;

/// Spin-dependent charge populations after SCC. `q_ms0`/`q_ms1` are P(NV⁻)
/// for a spin projected onto m_s = 0 / m_s = ±1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SccReadout {
    pub lambda0: f64,
    pub lambda1: f64,
    pub q_ms0: f64,
    pub q_ms1: f64,
}

impl SccReadout {
    pub fn mixture(&self, ms1: bool) -> PoissonMixture {
        PoissonMixture {
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            w_minus: if ms1 { self.q_ms1 } else { self.q_ms0 },
        }
    }

    pub fn sigma_r(&self) -> f64 {
        readout_noise(&self.mixture(false).stats(), &self.mixture(true).stats()).unwrap_or(f64::INFINITY)
    }

    /// Populations centred on `mean_minus` whose σ_R equals `target`.
    pub fn for_sigma_r(lambda0: f64, lambda1: f64, mean_minus: f64, target: f64) -> Result<Self, InvalidField> {
        check(lambda1 > lambda0 && lambda0 >= 0.0, "lambda1", || {
            format!("need lambda1 > lambda0 >= 0, got {lambda0}, {lambda1}")
        })?;
        check(mean_minus > 0.0 && mean_minus < 1.0, "nv_minus_init", || {
            format!("{mean_minus} must lie in (0, 1)")
        })?;
        let at = |d: f64| SccReadout {
            lambda0,
            lambda1,
            q_ms0: mean_minus + d / 2.0,
            q_ms1: mean_minus - d / 2.0,
        };
        let d_max = 2.0 * mean_minus.min(1.0 - mean_minus);
        let best = at(d_max).sigma_r();
        check(target >= best, "sigma_r", || {
            format!("{target} is below the best reachable value {best:.3} for these count means")
        })?;
        // σ_R decreases monotonically in the population contrast d.
        let (mut lo, mut hi) = (0.0, d_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid).sigma_r() > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(at(0.5 * (lo + hi)))
    }

    pub fn for_site(site: &NVSite) -> Result<Self, InvalidField> {
        Self::for_sigma_r(site.lambda0, site.lambda1, site.nv_minus_init / 2.0, site.sigma_r)
    }
}

/// Inverse-CDF count sampler over the truncated mixture support.
#[derive(Debug, Clone)]
struct CountSampler {
    cdf: Vec<f64>,
}

impl CountSampler {
    fn new(m: &PoissonMixture) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = m
            .pmf_table()
            .into_iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { cdf }
    }

    fn sample(&self, u: f64) -> f64 {
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) as f64
    }
}

struct SiteReadout {
    id: u32,
    sign: f64,
    ms0: CountSampler,
    ms1: CountSampler,
}

impl SiteReadout {
    fn new(site: &NVSite) -> Result<Self, InvalidField> {
        site.validate()?;
        let r = SccReadout::for_site(site)?;
        Ok(Self {
            id: site.id,
            sign: site.spin_prep.sign(),
            ms0: CountSampler::new(&r.mixture(false)),
            ms1: CountSampler::new(&r.mixture(true)),
        })
    }

    /// Projects onto m_s = ±1 with probability `p1` and draws a count.
    fn read(&self, rng: &mut StreamRng, p1: f64) -> f64 {
        let ms1 = rng.random::<f64>() < p1;
        let u = rng.random::<f64>();
        if ms1 {
            self.ms1.sample(u)
        } else {
            self.ms0.sample(u)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShotOptions {
    pub n_shots: u64,
    /// σ_N of the common detection gain.
    pub common_noise: f64,
    pub baseline: Baseline,
}

impl Default for ShotOptions {
    fn default() -> Self {
        Self {
            n_shots: 100_000,
            common_noise: DEFAULT_COMMON_NOISE,
            baseline: Baseline::default(),
        }
    }
}

impl ShotOptions {
    fn validate(&self, n_sites: usize) -> Result<(), InvalidField> {
        check(n_sites >= 2, "sites", || format!("need at least 2 sites, got {n_sites}"))?;
        check(self.n_shots >= 1000, "n_shots", || format!("{} is below 1000", self.n_shots))?;
        check(self.common_noise >= 0.0, "common_noise", || "must be non-negative".into())?;
        check(self.baseline.value.is_finite(), "baseline", || "must be finite".into())
    }
}

fn run_shots<F>(tree: &SeedTree, tag: &str, sweep_index: u64, n_shots: u64, k: usize, shot: F) -> CovAccumulator
where
    F: Fn(&mut StreamRng, u64, &mut [f64]) + Sync,
{
    let n_chunks = n_shots.div_ceil(CHUNK);
    let parts: Vec<CovAccumulator> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = tree.stream(tag, &[sweep_index, c]);
            let mut acc = CovAccumulator::new(k);
            let mut row = vec![0.0; k];
            for s in c * CHUNK..((c + 1) * CHUNK).min(n_shots) {
                shot(&mut rng, s, &mut row);
                acc.push(&row);
            }
            acc
        })
        .collect();
    let mut total = CovAccumulator::new(k);
    for p in &parts {
        total.merge(p);
    }
    total
}

fn gain(rng: &mut StreamRng, sigma_n: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    1.0 + sigma_n * z
}

/// One point of the interleaved rotation sweep: even shots rotate by θ, odd
/// shots by θ + π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivenSequence {
    pub theta: f64,
}

impl DrivenSequence {
    pub fn new(theta: f64) -> Result<Self, InvalidField> {
        check((0.0..TAU).contains(&theta), "theta", || format!("{theta} is outside [0, 2π)"))?;
        Ok(Self { theta })
    }

    pub fn rotation(&self, shot: u64) -> f64 {
        if shot.is_multiple_of(2) {
            self.theta
        } else {
            self.theta + PI
        }
    }

    /// P(m_s = ±1) after the rotation for a spin prepared per `prep`.
    pub fn flip_probability(&self, shot: u64, prep: SpinPrep) -> f64 {
        let h = 0.5 * self.rotation(shot);
        match prep {
            SpinPrep::Same => h.sin().powi(2),
            SpinPrep::Opposite => h.cos().powi(2),
        }
    }
}

/// Pair correlators for every θ in `sweep`, baseline-subtracted.
pub fn simulate_driven(
    sites: &[NVSite],
    sweep: &[DrivenSequence],
    opts: &ShotOptions,
    seed: u64,
) -> Result<Vec<CorrelationRecord>, CovarianceError> {
    opts.validate(sites.len())?;
    let readouts = sites.iter().map(SiteReadout::new).collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<u32> = readouts.iter().map(|r| r.id).collect();
    let tree = SeedTree::new(seed);
    let mut out = Vec::new();
    for (t, seq) in sweep.iter().enumerate() {
        let acc = run_shots(&tree, "driven-shots", t as u64, opts.n_shots, sites.len(), |rng, s, row| {
            let g = gain(rng, opts.common_noise);
            for ((v, r), site) in row.iter_mut().zip(&readouts).zip(sites) {
                *v = g * r.read(rng, seq.flip_probability(s, site.spin_prep));
            }
        });
        out.extend(acc.records(&ids, seq.theta, &opts.baseline)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectroscopyConfig {
    pub xy8: XY8Config,
    /// T
    pub ac_amplitude: f64,
    /// Hz
    pub frequencies: Vec<f64>,
    pub coherence_exponent: f64,
}

impl Default for SpectroscopyConfig {
    fn default() -> Self {
        Self {
            xy8: XY8Config::default(),
            ac_amplitude: 3.3e-6,
            frequencies: (0..=20).map(|i| 1.0e6 + 0.1e6 * i as f64).collect(),
            coherence_exponent: 2.0,
        }
    }
}

impl SpectroscopyConfig {
    /// Largest |φ_C| over the sweep.
    pub fn peak_phase(&self, c: &PhysConstants) -> f64 {
        let gamma_b = c.gyromagnetic_ratio() * self.ac_amplitude;
        let resonant = self.xy8.total_time() * 2.0 / PI;
        self.frequencies
            .iter()
            .map(|&f| crate::spinphysics::xy8_filter(&self.xy8, f))
            .fold(resonant, f64::max)
            * gamma_b
    }

    pub fn validate(&self, c: &PhysConstants) -> Result<(), InvalidField> {
        self.xy8.validate()?;
        check(self.ac_amplitude >= 0.0, "ac_amplitude", || "must be non-negative".into())?;
        check(!self.frequencies.is_empty(), "frequencies", || "sweep is empty".into())?;
        let peak = self.peak_phase(c);
        check(peak < FRAC_PI_2, "ac_amplitude", || {
            format!("peak accumulated phase {peak:.3} rad must stay below π/2")
        })
    }
}

/// Pair correlators versus AC frequency under an XY8 sequence. Each shot
/// sees the field with a fresh uniformly random phase.
pub fn simulate_spectroscopy(
    sites: &[NVSite],
    cfg: &SpectroscopyConfig,
    opts: &ShotOptions,
    constants: &PhysConstants,
    seed: u64,
) -> Result<Vec<CorrelationRecord>, CovarianceError> {
    opts.validate(sites.len())?;
    cfg.validate(constants)?;
    let readouts = sites.iter().map(SiteReadout::new).collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<u32> = readouts.iter().map(|r| r.id).collect();
    let t = cfg.xy8.total_time();
    let coherence: Vec<f64> = sites
        .iter()
        .map(|s| {
            let m = CoherenceModel {
                t2: s.t2_xy8,
                exponent: cfg.coherence_exponent,
            };
            m.validate().map(|_| coherence_factor(&m, t))
        })
        .collect::<Result<_, _>>()?;
    let gamma_b = constants.gyromagnetic_ratio() * cfg.ac_amplitude;
    let tree = SeedTree::new(seed);
    let mut out = Vec::new();
    for (fi, &f) in cfg.frequencies.iter().enumerate() {
        let (re, im) = cfg.xy8.response(f, 0.0);
        let acc = run_shots(&tree, "xy8-shots", fi as u64, opts.n_shots, sites.len(), |rng, _, row| {
            let g = gain(rng, opts.common_noise);
            let psi = rng.random::<f64>() * TAU;
            let sin_phi = (gamma_b * (re * psi.cos() - im * psi.sin())).sin();
            for ((v, r), c) in row.iter_mut().zip(&readouts).zip(&coherence) {
                let p1 = 0.5 * (1.0 - r.sign * c * sin_phi);
                *v = g * r.read(rng, p1);
            }
        });
        out.extend(acc.records(&ids, f, &opts.baseline)?);
    }
    Ok(out)
}

/// Monte Carlo of the two-emitter background model. For `r_true > 0` the
/// emitters share a Poisson(r·μ) component so that Corr(X1, X2) = r.
pub fn simulate_background(bg: &BackgroundModel, r_true: f64, n_shots: u64, seed: u64) -> Result<CorrelationRecord, CovarianceError> {
    bg.validate()?;
    check((0.0..1.0).contains(&r_true), "r_true", || format!("{r_true} must lie in [0, 1)"))?;
    check(bg.mu > 0.0, "mu", || "must be positive".into())?;
    let own = Poisson::new(bg.mu * (1.0 - r_true)).map_err(|e| InvalidField::new("mu", e.to_string()))?;
    let shared = (r_true > 0.0).then(|| Poisson::new(bg.mu * r_true).expect("positive rate"));
    let tree = SeedTree::new(seed);
    let acc = run_shots(&tree, "background-shots", 0, n_shots, 2, |rng, _, row| {
        let g = gain(rng, bg.sigma_n);
        let c: f64 = shared.map_or(0.0, |p| p.sample(rng));
        row[0] = g * (own.sample(rng) + c);
        row[1] = g * (own.sample(rng) + c);
    });
    let mut recs = acc.records(&[0, 1], r_true, &Baseline::default())?;
    Ok(recs.remove(0))
}

/// Null calibration: charge readout of every site with no spin manipulation.
/// The baseline is the mean over all pairs; its error is the pair spread over √n_pairs.
pub fn calibrate_baseline(sites: &[NVSite], n_shots: u64, common_noise: f64, seed: u64) -> Result<BaselineCalibration, CovarianceError> {
    ShotOptions {
        n_shots,
        common_noise,
        baseline: Baseline::default(),
    }
    .validate(sites.len())?;
    let samplers = sites
        .iter()
        .map(|s| {
            s.validate()?;
            Ok(CountSampler::new(&PoissonMixture::new(s.lambda0, s.lambda1, s.nv_minus_init)?))
        })
        .collect::<Result<Vec<_>, InvalidField>>()?;
    let ids: Vec<u32> = sites.iter().map(|s| s.id).collect();
    let tree = SeedTree::new(seed);
    let acc = run_shots(&tree, "baseline-shots", 0, n_shots, sites.len(), |rng, _, row| {
        let g = gain(rng, common_noise);
        for (v, s) in row.iter_mut().zip(&samplers) {
            *v = g * s.sample(rng.random());
        }
    });
    let rs: Vec<f64> = acc.records(&ids, 0.0, &Baseline::default())?.iter().map(|r| r.r_raw).collect();
    let n = rs.len() as f64;
    let mean = rs.iter().sum::<f64>() / n;
    let sd = if rs.len() > 1 {
        (rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        // One pair: fall back to the small-r sampling error.
        (1.0 - mean * mean) / ((n_shots - 1) as f64).sqrt()
    };
    Ok(BaselineCalibration {
        baseline: mean,
        stderr: sd / n.sqrt(),
        n_pairs: rs.len(),
        n_shots,
    })
}

/// Least-squares fit of r(θ) = A·cos²(θ − θ0), pooled over series with signs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cos2Fit {
    pub amplitude: f64,
    pub amplitude_stderr: f64,
    /// In [−π/2, π/2).
    pub theta0: f64,
    pub rms_residual: f64,
}

/// Scans θ0 on a 0.05 mrad grid; A is closed-form for each θ0. Each series
/// is multiplied by its sign before pooling.
pub fn fit_cos2(thetas: &[f64], series: &[(f64, &[f64])]) -> Result<Cos2Fit, InvalidField> {
    check(thetas.len() >= 3, "thetas", || "need at least 3 sweep points".into())?;
    check(series.iter().all(|(_, s)| s.len() == thetas.len()), "series", || {
        "every series must match the sweep length".into()
    })?;
    check(!series.is_empty(), "series", || "no series given".into())?;
    let yy: f64 = series.iter().flat_map(|(_, s)| s.iter()).map(|v| v * v).sum();
    let steps = 62_832usize;
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for g in 0..steps {
        let t0 = -FRAC_PI_2 + PI * g as f64 / steps as f64;
        let (mut yc, mut cc) = (0.0, 0.0);
        for (i, &th) in thetas.iter().enumerate() {
            let c = (th - t0).cos().powi(2);
            let ysum: f64 = series.iter().map(|(sg, s)| sg * s[i]).sum();
            yc += ysum * c;
            cc += c * c * series.len() as f64;
        }
        let a = yc / cc;
        let sse = yy - a * yc;
        if sse < best.0 {
            best = (sse, a, t0, cc);
        }
    }
    let (sse, a, t0, cc) = best;
    let m = (thetas.len() * series.len()) as f64;
    let s2 = sse.max(0.0) / (m - 2.0).max(1.0);
    Ok(Cos2Fit {
        amplitude: a,
        amplitude_stderr: (s2 / cc).sqrt(),
        theta0: t0,
        rms_residual: (sse.max(0.0) / m).sqrt(),
    })
}
