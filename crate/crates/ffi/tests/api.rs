use std::ffi::{c_char, CString};
use std::ptr;

use nvmux::photonstats::PoissonMixture;
use nvmux::{FrameStack, SeedTree};
use nvmux_ffi::*;
use rand::Rng;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { nvmux_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn readout_noise_projective_limit() {
    let mut out = 0.0;
    // Noiseless, perfectly separated counts: σ_R = 1.
    let st = unsafe { nvmux_readout_noise(0.0, 0.0, 1.0, 0.0, &mut out) };
    assert_eq!(st, NvmuxStatus::Ok);
    assert_eq!(out, 1.0);
    let st = unsafe { nvmux_readout_noise(1.0, 1.0, 1.0, 1.0, &mut out) };
    assert_eq!(st, NvmuxStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { nvmux_readout_noise(0.0, 0.0, 1.0, 0.0, ptr::null_mut()) }, NvmuxStatus::NullPointer);
    assert_eq!(last_error(), "out is null");
}

#[test]
fn error_message_truncates_and_reports_length() {
    unsafe { nvmux_readout_noise(0.0, 0.0, 1.0, 0.0, ptr::null_mut()) };
    let mut buf = [0 as c_char; 4];
    let n = unsafe { nvmux_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, "out is null".len());
    assert_eq!(buf.map(|c| c as u8), *b"out\0");
    assert_eq!(unsafe { nvmux_last_error(ptr::null_mut(), 0) }, n);
}

#[test]
fn mixture_fit_round_trip() {
    let m = PoissonMixture::new(1.6, 6.7, 0.7).unwrap();
    let table = m.pmf_table();
    let mut rng = SeedTree::new(3).stream("ffi", &[]);
    let counts: Vec<u32> = (0..50_000)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            table.iter().position(|p| {
                acc += p;
                acc > u
            }).unwrap_or(table.len() - 1) as u32
        })
        .collect();
    let mut fit = NvmuxMixtureFit::default();
    assert_eq!(unsafe { nvmux_fit_double_poisson(counts.as_ptr(), counts.len(), &mut fit) }, NvmuxStatus::Ok);
    assert!((fit.w_minus - 0.7).abs() < 0.02, "{fit:?}");
    assert!(!fit.degenerate);
    let (mut f, mut t) = (0.0, 0u64);
    assert_eq!(unsafe { nvmux_charge_fidelity(fit.lambda0, fit.lambda1, &mut f, &mut t) }, NvmuxStatus::Ok);
    assert_eq!((f, t), (fit.fidelity, fit.threshold));

    assert_eq!(unsafe { nvmux_fit_double_poisson(counts.as_ptr(), 10, &mut fit) }, NvmuxStatus::FitFailed);
    assert_eq!(unsafe { nvmux_charge_fidelity(6.7, 1.6, &mut f, &mut t) }, NvmuxStatus::InvalidArgument);
}

#[test]
fn frames_handle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.nvfr");
    let mut px = vec![500u16; 2 * 8 * 8];
    px[8 * 8 + 3 * 8 + 3] = 2000;
    nvmux::write_frames(&FrameStack::new(8, 8, px).unwrap(), &path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { nvmux_frames_open(c.as_ptr(), &mut h) }, NvmuxStatus::Ok);
    let (mut w, mut ht, mut n) = (0, 0, 0);
    assert_eq!(unsafe { nvmux_frames_dims(h, &mut w, &mut ht, &mut n) }, NvmuxStatus::Ok);
    assert_eq!((w, ht, n), (8, 8, 2));
    let mut data = ptr::null();
    assert_eq!(unsafe { nvmux_frames_data(h, 1, &mut data) }, NvmuxStatus::Ok);
    assert_eq!(unsafe { *data.add(27) }, 2000);
    assert_eq!(unsafe { nvmux_frames_data(h, 2, &mut data) }, NvmuxStatus::InvalidArgument);
    let mut counts = [0u32; 2];
    assert_eq!(unsafe { nvmux_frames_threshold_counts(h, 3.0, 3.0, 600.0, 3, counts.as_mut_ptr(), 2) }, NvmuxStatus::Ok);
    assert_eq!(counts, [0, 1]);
    assert_eq!(unsafe { nvmux_frames_threshold_counts(h, 3.0, 3.0, 600.0, 3, counts.as_mut_ptr(), 1) }, NvmuxStatus::InvalidArgument);
    unsafe { nvmux_frames_free(h) };

    let missing = CString::new(dir.path().join("none.nvfr").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nvmux_frames_open(missing.as_ptr(), &mut h) }, NvmuxStatus::Io);
    std::fs::write(&path, b"XXXX").unwrap();
    assert_eq!(unsafe { nvmux_frames_open(c.as_ptr(), &mut h) }, NvmuxStatus::Format);
    unsafe { nvmux_frames_free(ptr::null_mut()) };
}

#[test]
fn covariance_merge_matches_single_pass() {
    let mut rng = SeedTree::new(8).stream("ffi-cov", &[]);
    let rows: Vec<[f64; 3]> = (0..1000)
        .map(|_| {
            let c: f64 = rng.random();
            [c + rng.random::<f64>(), c + rng.random::<f64>(), rng.random()]
        })
        .collect();
    let (mut all, mut a, mut b) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(nvmux_cov_new(3, &mut all), NvmuxStatus::Ok);
        nvmux_cov_new(3, &mut a);
        nvmux_cov_new(3, &mut b);
        for (k, r) in rows.iter().enumerate() {
            assert_eq!(nvmux_cov_push(all, r.as_ptr(), 3), NvmuxStatus::Ok);
            nvmux_cov_push(if k < 400 { a } else { b }, r.as_ptr(), 3);
        }
        assert_eq!(nvmux_cov_merge(a, b), NvmuxStatus::Ok);
        assert_eq!(nvmux_cov_merge(a, a), NvmuxStatus::InvalidArgument);
        let (mut r1, mut r2, mut n) = (0.0, 0.0, 0u64);
        nvmux_cov_correlation(all, 0, 1, &mut r1, &mut n);
        assert_eq!(nvmux_cov_correlation(a, 0, 1, &mut r2, &mut n), NvmuxStatus::Ok);
        assert_eq!(n, 1000);
        assert!((r1 - r2).abs() < 1e-12 && r1 > 0.3, "{r1} {r2}");
        assert_eq!(nvmux_cov_correlation(a, 0, 3, &mut r2, &mut n), NvmuxStatus::InvalidArgument);
        assert_eq!(nvmux_cov_push(a, rows[0].as_ptr(), 2), NvmuxStatus::InvalidArgument);
        let mut two = ptr::null_mut();
        nvmux_cov_new(2, &mut two);
        assert_eq!(nvmux_cov_merge(a, two), NvmuxStatus::InvalidArgument);
        assert_eq!(nvmux_cov_new(1, &mut two), NvmuxStatus::InvalidArgument);
        for h in [all, a, b] {
            nvmux_cov_free(h);
        }
    }
}

#[test]
fn hologram_handle() {
    let spots: Vec<NvmuxSpot> = [(20.0, 24.0), (40.0, 30.0), (30.0, 44.0)]
        .iter()
        .map(|&(x, y)| NvmuxSpot { x, y, amplitude: 1.0 })
        .collect();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { nvmux_wgs(spots.as_ptr(), spots.len(), 64, 64, 30, 1, &mut h) }, NvmuxStatus::Ok);
    let (mut u, mut p, mut w, mut ht) = (0.0, ptr::null(), 0, 0);
    unsafe {
        nvmux_hologram_uniformity(h, &mut u);
        nvmux_hologram_phases(h, &mut p, &mut w, &mut ht);
    }
    assert!(u > 0.95, "{u}");
    assert_eq!((w, ht), (64, 64));
    let phases = unsafe { std::slice::from_raw_parts(p, w * ht) };
    assert!(phases.iter().all(|v| (0.0..std::f64::consts::TAU).contains(v)));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.phas");
    let c = CString::new(out.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nvmux_hologram_write(h, c.as_ptr()) }, NvmuxStatus::Ok);
    // PHAS stores float32.
    let back = nvmux::holography::read_phas(&out).unwrap().phases;
    assert!(back.iter().zip(phases).all(|(a, b)| (a - b).abs() < 1e-6));
    unsafe { nvmux_hologram_free(h) };
    assert_eq!(unsafe { nvmux_wgs(spots.as_ptr(), spots.len(), 64, 64, 0, 1, &mut h) }, NvmuxStatus::InvalidArgument);
}
