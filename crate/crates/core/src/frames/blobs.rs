//! Difference-of-Gaussians blob detection.

use nalgebra::Matrix2;

/// `sigma` is the expected PSF width in pixels; `threshold` is in robust
/// standard deviations (1.4826·MAD) of the band-passed image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobOptions {
    pub sigma: f64,
    pub threshold: f64,
    /// Blobs within this many `sigma` of another blob are flagged ambiguous.
    pub neighbour_sigmas: f64,
    /// Second-moment eigenvalue ratio above which a blob is flagged elongated.
    pub max_elongation: f64,
}

impl Default for BlobOptions {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            threshold: 6.0,
            neighbour_sigmas: 3.0,
            max_elongation: 1.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub x: f64,
    pub y: f64,
    /// Band-pass response at the peak.
    pub response: f64,
    /// Close neighbour or elongated footprint; possibly two unresolved emitters.
    pub ambiguous: bool,
}

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn blur(img: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * img[y * w + reflect(x as i64 + j as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[reflect(y as i64 + j as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    let m = v.len() / 2;
    *v.select_nth_unstable_by(m, f64::total_cmp).1
}

pub fn detect_blobs(image: &[f64], width: usize, height: usize, opts: &BlobOptions) -> Vec<Blob> {
    if image.is_empty() || image.len() != width * height {
        return Vec::new();
    }
    let a = blur(image, width, height, opts.sigma);
    let b = blur(image, width, height, 1.6 * opts.sigma);
    let dog: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
    let mut scratch = dog.clone();
    let med = median(&mut scratch);
    scratch.iter_mut().for_each(|v| *v = (*v - med).abs());
    let mad = 1.4826 * median(&mut scratch);
    let peak = dog.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > med) {
        return Vec::new();
    }
    // A noiseless image has zero MAD; fall back to a fraction of the peak.
    let scale = if mad > 0.0 { mad } else { 1e-3 * (peak - med) };
    let thresh = med + opts.threshold * scale;

    let r = (opts.sigma.round() as i64).max(1);
    let at = |x: i64, y: i64| dog[y as usize * width + x as usize];
    let mut found = Vec::new();
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let v = at(x, y);
            if v <= thresh {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let u = at(nx, ny);
                    // Plateau ties go to the first pixel in scan order.
                    if u > v || (u == v && (ny, nx) < (y, x)) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                let sub = |m: f64, c: f64, p: f64| {
                    let d = m - 2.0 * c + p;
                    if d < 0.0 {
                        (0.5 * (m - p) / d).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    }
                };
                let ox = if x > 0 && x + 1 < width as i64 { sub(at(x - 1, y), v, at(x + 1, y)) } else { 0.0 };
                let oy = if y > 0 && y + 1 < height as i64 { sub(at(x, y - 1), v, at(x, y + 1)) } else { 0.0 };
                found.push(Blob {
                    x: x as f64 + ox,
                    y: y as f64 + oy,
                    response: v,
                    ambiguous: false,
                });
            }
        }
    }

    let mut bg_scratch = a.clone();
    let bg = median(&mut bg_scratch);
    let near = opts.neighbour_sigmas * opts.sigma;
    let flags: Vec<bool> = found
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let crowded = found
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && (o.x - b.x).hypot(o.y - b.y) < near);
            crowded || elongation(&a, width, height, b, opts.sigma, bg) > opts.max_elongation
        })
        .collect();
    for (b, f) in found.iter_mut().zip(flags) {
        b.ambiguous = f;
    }
    found
}

/// Ratio of principal second moments of the smoothed footprint above
/// half of its peak height.
fn elongation(smooth: &[f64], width: usize, height: usize, b: &Blob, sigma: f64, bg: f64) -> f64 {
    let r = (4.0 * sigma).ceil() as i64;
    let (cx, cy) = (b.x.round() as i64, b.y.round() as i64);
    let level = 0.5 * (smooth[cy as usize * width + cx as usize] - bg);
    let mut pts = Vec::new();
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                continue;
            }
            let w = smooth[y as usize * width + x as usize] - bg - level;
            if w > 0.0 {
                pts.push((x as f64, y as f64, w));
            }
        }
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    if !(sw > 0.0) {
        return 1.0;
    }
    let mx = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / sw;
    let mut m = Matrix2::zeros();
    for &(x, y, w) in &pts {
        let (dx, dy) = (x - mx, y - my);
        m += Matrix2::new(dx * dx, dx * dy, dx * dy, dy * dy) * (w / sw);
    }
    let ev = m.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}
