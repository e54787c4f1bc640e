use crate::error::{Error, Result};
use crate::frame::Frame;

/// PSNR reported for identical frames (and never exceeded).
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Frame, b: &Frame, what: &str) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Contract(format!(
            "{what}: frame sizes differ ({}x{} vs {}x{})",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn clamped(f: &Frame) -> Vec<f64> {
    f.data().iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect()
}

/// PSNR in dB of two frames after clamping both to `[0, 1]`.
pub fn psnr(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    check_shapes(a, b, "psnr")?;
    psnr_values(&clamped(a), &clamped(b), peak)
}

/// PSNR of two equally long sample arrays, taken as given.
pub fn psnr_values(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract(format!("psnr: {} vs {} samples", a.len(), b.len())));
    }
    if !(peak > 0.0) {
        return Err(Error::Contract(format!("psnr: peak must be positive, got {peak}")));
    }
    let sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over RGB channels after clamping to `[0, 1]`.
///
/// Gaussian 11x11 window with sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1,
/// averaged over window positions fully inside the frame.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b, "ssim")?;
    ssim_values(&clamped(a), &clamped(b), 3, a.height(), a.width())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-region separable filtering of one `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, gi) in g.iter().enumerate() {
            let row = &rows[(y + i) * ow..(y + i + 1) * ow];
            for (o, r) in out[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                *o += gi * r;
            }
        }
    }
    out
}

/// SSIM of two `channels x h x w` planar arrays, averaged over channels.
pub fn ssim_values(a: &[f64], b: &[f64], channels: usize, h: usize, w: usize) -> Result<f64> {
    let n = channels * h * w;
    if a.len() != n || b.len() != n || channels == 0 {
        return Err(Error::Contract(format!(
            "ssim: expected {channels}x{h}x{w} samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "frame {h}x{w} is smaller than the {k}x{k} SSIM window; resize or pad to at least {k}x{k}",
            k = SSIM_WINDOW
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let plane = h * w;
    let mut total = 0.0;
    for c in 0..channels {
        let pa = &a[c * plane..(c + 1) * plane];
        let pb = &b[c * plane..(c + 1) * plane];
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(pa, h, w, &g);
        let mu_b = filter_valid(pb, h, w, &g);
        let e_aa = filter_valid(&prod(pa, pa), h, w, &g);
        let e_bb = filter_valid(&prod(pb, pb), h, w, &g);
        let e_ab = filter_valid(&prod(pa, pb), h, w, &g);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            sum += num / den;
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / channels as f64)
}
