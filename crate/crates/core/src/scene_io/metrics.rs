//! Image metrics on a 0-255 scale.

use crate::core::{Image, PixelMask};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const PSNR_CAP: f64 = 100.0;

fn check(a: &Image, b: &Image, mask: Option<&PixelMask>) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Dimension {
            what: "image pixels",
            expected: a.len(),
            found: b.len(),
        });
    }
    if let Some(m) = mask {
        if m.width() != a.width() || m.height() != a.height() {
            return Err(Error::Dimension {
                what: "mask pixels",
                expected: a.len(),
                found: m.width() * m.height(),
            });
        }
        if m.count() == 0 {
            return Err(Error::InvalidArgument("mask selects no pixels".into()));
        }
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    Ok(())
}

fn selected<'a>(
    a: &'a Image,
    b: &'a Image,
    mask: Option<&'a PixelMask>,
) -> impl Iterator<Item = (&'a [f64; 3], &'a [f64; 3])> {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .enumerate()
        .filter(move |(p, _)| mask.is_none_or(|m| m.bits()[*p]))
        .map(|(_, x)| x)
}

/// Mean absolute difference, 0-255 scale.
pub fn metric_mae(a: &Image, b: &Image, mask: Option<&PixelMask>) -> Result<f64> {
    check(a, b, mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in selected(a, b, mask) {
        for c in 0..3 {
            sum += (x[c] - y[c]).abs() * 255.0;
        }
        n += 3;
    }
    Ok(sum / n as f64)
}

/// `20 log10(255 / RMSE)` with RMSE on the 0-255 scale, capped at 100 dB.
pub fn metric_psnr(a: &Image, b: &Image, mask: Option<&PixelMask>) -> Result<f64> {
    check(a, b, mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in selected(a, b, mask) {
        for c in 0..3 {
            sum += ((x[c] - y[c]) * 255.0).powi(2);
        }
        n += 3;
    }
    let rmse = (sum / n as f64).sqrt();
    if rmse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((20.0 * (255.0 / rmse).log10()).min(PSNR_CAP))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable filtering over the valid region: output `(h - 10) x (w - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * src[y * w + x + i];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean SSIM over every valid 11x11 window (whose center is in the mask, if
/// given) and over channels, with a Gaussian window of sigma 1.5.
pub fn metric_ssim(a: &Image, b: &Image, mask: Option<&PixelMask>) -> Result<f64> {
    check(a, b, mask)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )));
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let k = gaussian_kernel();
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let r = SSIM_WINDOW / 2;
    let centers: Vec<usize> = (0..ow * oh)
        .filter(|&i| mask.is_none_or(|m| m.get(i % ow + r, i / ow + r)))
        .collect();
    if centers.is_empty() {
        return Err(Error::InvalidArgument("mask leaves no complete SSIM window".into()));
    }
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.pixels().iter().map(|p| p[c] * 255.0).collect();
        let y: Vec<f64> = b.pixels().iter().map(|p| p[c] * 255.0).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&xx, w, h, &k);
        let syy = filter_valid(&yy, w, h, &k);
        let sxy = filter_valid(&xy, w, h, &k);
        for &i in &centers {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (3 * centers.len()) as f64)
}
