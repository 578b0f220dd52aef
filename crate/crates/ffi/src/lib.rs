//! C ABI over the nvmux toolkit.
//!
//! Every entry point returns an [`NvmuxStatus`]. On failure the message is
//! kept per thread and read with [`nvmux_last_error`]. Handles are opaque and
//! must be released with their matching `_free` function. Panics never cross
//! the boundary; they surface as [`NvmuxStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nvmux::covariance::CovAccumulator;
use nvmux::frames::threshold_count;
use nvmux::holography::{wgs, PhasePattern, SpotTarget, SpotTargets, WgsOptions};
use nvmux::photonstats::{charge_fidelity, fit_double_poisson, readout_noise, CountStats, FitOptions, Histogram, PoissonMixture};
use nvmux::{CameraModel, FrameStack};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NvmuxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    FitFailed = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(NvmuxStatus, String);

impl Failure {
    fn invalid(msg: impl ToString) -> Self {
        Failure(NvmuxStatus::InvalidArgument, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NvmuxStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (NvmuxStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (NvmuxStatus::Panic, m)
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(NvmuxStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::invalid("path is not UTF-8"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes. Pass a
/// null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nvmux_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Excess readout noise from the count mean and variance of the two spin states.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nvmux_readout_noise(mean0: f64, var0: f64, mean1: f64, var1: f64, out: *mut f64) -> NvmuxStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = |mean, variance| CountStats {
            mean,
            variance,
            n_samples: None,
        };
        *out = readout_noise(&s(mean0, var0), &s(mean1, var1)).map_err(Failure::invalid)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NvmuxMixtureFit {
    pub lambda0: f64,
    pub lambda1: f64,
    pub w_minus: f64,
    /// Standard errors of (lambda0, lambda1, w_minus); NaN when singular.
    pub std_errors: [f64; 3],
    pub loglik: f64,
    /// Threshold fidelity at the fitted parameters; NaN when degenerate.
    pub fidelity: f64,
    /// Counts strictly above this classify as NV⁻.
    pub threshold: u64,
    pub degenerate: bool,
}

/// Two-component Poisson mixture fit of per-shot photon counts.
///
/// # Safety
/// `counts` must point to `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_fit_double_poisson(counts: *const u32, n: usize, out: *mut NvmuxMixtureFit) -> NvmuxStatus {
    guard(|| {
        non_null(out, "out")?;
        let counts = slice(counts, n, "counts")?;
        let fit = fit_double_poisson(&Histogram::from_samples(counts.iter().copied()), &FitOptions::default())
            .map_err(|e| Failure(NvmuxStatus::FitFailed, e.to_string()))?;
        let m = fit.mixture;
        let (fidelity, threshold) = match charge_fidelity(&m) {
            Ok(f) if !fit.degenerate => (f.fidelity, f.threshold),
            _ => (f64::NAN, 0),
        };
        *out = NvmuxMixtureFit {
            lambda0: m.lambda0,
            lambda1: m.lambda1,
            w_minus: m.w_minus,
            std_errors: fit.stderr,
            loglik: fit.loglik,
            fidelity,
            threshold,
            degenerate: fit.degenerate,
        };
        Ok(())
    })
}

/// Optimal-threshold charge readout fidelity for Poisson means `lambda0 < lambda1`.
///
/// # Safety
/// `fidelity` and `threshold` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nvmux_charge_fidelity(lambda0: f64, lambda1: f64, fidelity: *mut f64, threshold: *mut u64) -> NvmuxStatus {
    guard(|| {
        non_null(fidelity, "fidelity")?;
        non_null(threshold, "threshold")?;
        let m = PoissonMixture::new(lambda0, lambda1, 0.5).map_err(Failure::invalid)?;
        let f = charge_fidelity(&m).map_err(Failure::invalid)?;
        *fidelity = f.fidelity;
        *threshold = f.threshold;
        Ok(())
    })
}

/// Opaque frame stack.
pub struct NvmuxFrames(FrameStack);

/// Reads an NVFR file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_frames_open(path: *const c_char, out: *mut *mut NvmuxFrames) -> NvmuxStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = path_arg(path)?;
        let stack = nvmux::read_frames(&p).map_err(|e| match e {
            nvmux::FormatError::Io(_) => Failure(NvmuxStatus::Io, format!("{}: {e}", p.display())),
            e => Failure(NvmuxStatus::Format, format!("{}: {e}", p.display())),
        })?;
        *out = Box::into_raw(Box::new(NvmuxFrames(stack)));
        Ok(())
    })
}

/// # Safety
/// `frames` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_frames_dims(
    frames: *const NvmuxFrames,
    width: *mut usize,
    height: *mut usize,
    n_frames: *mut usize,
) -> NvmuxStatus {
    guard(|| {
        non_null(frames, "frames")?;
        non_null(width, "width")?;
        non_null(height, "height")?;
        non_null(n_frames, "n_frames")?;
        let s = &(*frames).0;
        (*width, *height, *n_frames) = (s.width, s.height, s.n_frames);
        Ok(())
    })
}

/// Borrowed pointer to frame `index` (row-major, width·height values). Valid
/// until the handle is freed.
///
/// # Safety
/// `frames` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_frames_data(frames: *const NvmuxFrames, index: usize, out: *mut *const u16) -> NvmuxStatus {
    guard(|| {
        non_null(frames, "frames")?;
        non_null(out, "out")?;
        let s = &(*frames).0;
        if index >= s.n_frames {
            return Err(Failure::invalid(format!("frame {index} out of range (n_frames = {})", s.n_frames)));
        }
        *out = s.frame(index).as_ptr();
        Ok(())
    })
}

/// Thresholded photon counts of the region centred on (x, y) in every frame,
/// using the default camera with `t_pc` and `roi_n` overridden.
///
/// # Safety
/// `frames` must be a live handle; `out` must hold `len` values, `len` ≥ n_frames.
#[no_mangle]
pub unsafe extern "C" fn nvmux_frames_threshold_counts(
    frames: *const NvmuxFrames,
    x: f64,
    y: f64,
    t_pc: f64,
    roi_n: usize,
    out: *mut u32,
    len: usize,
) -> NvmuxStatus {
    guard(|| {
        non_null(frames, "frames")?;
        non_null(out, "out")?;
        let s = &(*frames).0;
        if len < s.n_frames {
            return Err(Failure::invalid(format!("output holds {len} values, need {}", s.n_frames)));
        }
        let camera = CameraModel {
            t_pc,
            roi_n,
            ..CameraModel::default()
        };
        camera.validate().map_err(Failure::invalid)?;
        let out = std::slice::from_raw_parts_mut(out, s.n_frames);
        for (o, f) in out.iter_mut().zip(s.frames()) {
            *o = threshold_count(f, s.width, s.height, x, y, &camera).map_err(Failure::invalid)?;
        }
        Ok(())
    })
}

/// # Safety
/// `frames` must be null or a handle from [`nvmux_frames_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nvmux_frames_free(frames: *mut NvmuxFrames) {
    if !frames.is_null() {
        drop(Box::from_raw(frames));
    }
}

/// Opaque streaming covariance accumulator.
pub struct NvmuxCovariance(CovAccumulator);

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_cov_new(channels: usize, out: *mut *mut NvmuxCovariance) -> NvmuxStatus {
    guard(|| {
        non_null(out, "out")?;
        if channels < 2 {
            return Err(Failure::invalid("need at least 2 channels"));
        }
        *out = Box::into_raw(Box::new(NvmuxCovariance(CovAccumulator::new(channels))));
        Ok(())
    })
}

/// Adds one shot: `values` holds one value per channel.
///
/// # Safety
/// `cov` must be a live handle; `values` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn nvmux_cov_push(cov: *mut NvmuxCovariance, values: *const f64, len: usize) -> NvmuxStatus {
    guard(|| {
        non_null(cov, "cov")?;
        let acc = &mut (*cov).0;
        if len != acc.channels() {
            return Err(Failure::invalid(format!("{len} values for {} channels", acc.channels())));
        }
        acc.push(slice(values, len, "values")?);
        Ok(())
    })
}

/// Folds `other` into `into`; `other` is unchanged.
///
/// # Safety
/// Both must be live, distinct handles.
#[no_mangle]
pub unsafe extern "C" fn nvmux_cov_merge(into: *mut NvmuxCovariance, other: *const NvmuxCovariance) -> NvmuxStatus {
    guard(|| {
        non_null(into, "into")?;
        non_null(other, "other")?;
        if std::ptr::eq(into, other) {
            return Err(Failure::invalid("cannot merge an accumulator into itself"));
        }
        let (a, b) = (&mut (*into).0, &(*other).0);
        if a.channels() != b.channels() {
            return Err(Failure::invalid(format!("{} vs {} channels", a.channels(), b.channels())));
        }
        a.merge(b);
        Ok(())
    })
}

/// Pearson correlation between channels `i` and `j`, with its shot count.
///
/// # Safety
/// `cov` must be a live handle; `r` and `n_shots` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_cov_correlation(
    cov: *const NvmuxCovariance,
    i: usize,
    j: usize,
    r: *mut f64,
    n_shots: *mut u64,
) -> NvmuxStatus {
    guard(|| {
        non_null(cov, "cov")?;
        non_null(r, "r")?;
        non_null(n_shots, "n_shots")?;
        let acc = &(*cov).0;
        if i >= acc.channels() || j >= acc.channels() {
            return Err(Failure::invalid(format!("channel pair ({i}, {j}) out of range")));
        }
        *r = acc.correlation(i, j).map_err(Failure::invalid)?;
        *n_shots = acc.count();
        Ok(())
    })
}

/// # Safety
/// `cov` must be null or a handle from [`nvmux_cov_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nvmux_cov_free(cov: *mut NvmuxCovariance) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NvmuxSpot {
    /// Far-field pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
}

/// Opaque SLM phase pattern with its synthesis report.
pub struct NvmuxHologram {
    pattern: PhasePattern,
    uniformity: f64,
}

/// Weighted Gerchberg-Saxton synthesis for `n_spots` targets on a
/// `width`×`height` grid.
///
/// # Safety
/// `spots` must point to `n_spots` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_wgs(
    spots: *const NvmuxSpot,
    n_spots: usize,
    width: usize,
    height: usize,
    iterations: usize,
    seed: u64,
    out: *mut *mut NvmuxHologram,
) -> NvmuxStatus {
    guard(|| {
        non_null(out, "out")?;
        let spots = slice(spots, n_spots, "spots")?;
        let targets = SpotTargets::new(
            spots
                .iter()
                .map(|s| SpotTarget {
                    x: s.x,
                    y: s.y,
                    amplitude: s.amplitude,
                })
                .collect(),
        )
        .map_err(Failure::invalid)?;
        let opts = WgsOptions {
            iterations,
            seed,
            ..WgsOptions::default()
        };
        let res = wgs(&targets, width, height, &opts).map_err(Failure::invalid)?;
        *out = Box::into_raw(Box::new(NvmuxHologram {
            pattern: res.pattern,
            uniformity: res.uniformity,
        }));
        Ok(())
    })
}

/// Borrowed row-major phases in [0, 2π), valid until the handle is freed.
///
/// # Safety
/// `holo` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_hologram_phases(
    holo: *const NvmuxHologram,
    phases: *mut *const f64,
    width: *mut usize,
    height: *mut usize,
) -> NvmuxStatus {
    guard(|| {
        non_null(holo, "holo")?;
        non_null(phases, "phases")?;
        non_null(width, "width")?;
        non_null(height, "height")?;
        let p = &(*holo).pattern;
        (*phases, *width, *height) = (p.phases.as_ptr(), p.width, p.height);
        Ok(())
    })
}

/// min/max achieved spot amplitude relative to the request.
///
/// # Safety
/// `holo` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nvmux_hologram_uniformity(holo: *const NvmuxHologram, out: *mut f64) -> NvmuxStatus {
    guard(|| {
        non_null(holo, "holo")?;
        non_null(out, "out")?;
        *out = (*holo).uniformity;
        Ok(())
    })
}

/// Writes the pattern as a PHAS file.
///
/// # Safety
/// `holo` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nvmux_hologram_write(holo: *const NvmuxHologram, path: *const c_char) -> NvmuxStatus {
    guard(|| {
        non_null(holo, "holo")?;
        let p = path_arg(path)?;
        nvmux::holography::write_phas(&(*holo).pattern, &p).map_err(|e| Failure(NvmuxStatus::Io, format!("{}: {e}", p.display())))
    })
}

/// # Safety
/// `holo` must be null or a handle from [`nvmux_wgs`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nvmux_hologram_free(holo: *mut NvmuxHologram) {
    if !holo.is_null() {
        drop(Box::from_raw(holo));
    }
}
