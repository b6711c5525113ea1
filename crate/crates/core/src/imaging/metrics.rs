//! PSNR and SSIM on `[0, 1]` luminance, after shaving a border.

use std::fmt;

use crate::error::{shape_err, Result};
use crate::imaging::luma::LumaImage;

/// Peak signal-to-noise ratio. Identical inputs have no finite PSNR and get
/// their own variant instead of an overflowed float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    /// Decibels, with `Identical` mapped to `+inf`.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }

    pub fn is_identical(self) -> bool {
        matches!(self, Psnr::Identical)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("inf"),
        }
    }
}

fn shaved_pair(a: &LumaImage, b: &LumaImage, shave: usize) -> Result<(LumaImage, LumaImage)> {
    a.check_same(b)?;
    if shave == 0 {
        return Ok((a.clone(), b.clone()));
    }
    Ok((a.shave(shave)?, b.shave(shave)?))
}

pub fn mse(a: &LumaImage, b: &LumaImage) -> Result<f64> {
    a.check_same(b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.pixels().len().max(1) as f64)
}

/// `10 log10(1 / MSE)` over the images with `shave` pixels removed per side.
pub fn psnr(a: &LumaImage, b: &LumaImage, shave: usize) -> Result<Psnr> {
    let (a, b) = shaved_pair(a, b, shave)?;
    let err = mse(&a, &b)?;
    if err == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(10.0 * (1.0 / err).log10()))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Separable Gaussian filter, keeping only fully covered positions.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; oh * w];
    for y in 0..oh {
        for (k, &t) in taps.iter().enumerate() {
            let line = &src[(y + k) * w..(y + k + 1) * w];
            for (d, &s) in rows[y * w..(y + 1) * w].iter_mut().zip(line) {
                *d += t * s;
            }
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let line = &rows[y * w..(y + 1) * w];
        for x in 0..ow {
            out[y * ow + x] = taps.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(t, s)| t * s).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03` and dynamic range 1.
pub fn ssim(a: &LumaImage, b: &LumaImage, shave: usize) -> Result<f64> {
    let (a, b) = shaved_pair(a, b, shave)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape_err!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"));
    }
    let taps = gaussian_taps();
    let (x, y) = (a.pixels(), b.pixels());
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mu_x = filter_valid(x, h, w, &taps);
    let mu_y = filter_valid(y, h, w, &taps);
    let xx = filter_valid(&prod(x, x), h, w, &taps);
    let yy = filter_valid(&prod(y, y), h, w, &taps);
    let xy = filter_valid(&prod(x, y), h, w, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sx = xx[i] - mx * mx;
        let sy = yy[i] - my * my;
        let sxy = xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub psnr: Psnr,
    pub ssim: f64,
    pub scale: usize,
    pub shave: usize,
}

/// PSNR and SSIM of `output` against `reference` under one shave setting.
/// Every score in the crate goes through here.
pub fn evaluate(output: &LumaImage, reference: &LumaImage, scale: usize, shave: usize) -> Result<EvalReport> {
    Ok(EvalReport {
        psnr: psnr(output, reference, shave)?,
        ssim: ssim(output, reference, shave)?,
        scale,
        shave,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> LumaImage {
        LumaImage::from_fn(h, w, |y, x| 0.5 + 0.4 * ((x * 7 + y * 3) % 11) as f64 / 11.0 - 0.2)
    }

    #[test]
    fn identical_images() {
        let a = textured(20, 24);
        assert_eq!(psnr(&a, &a, 2).unwrap(), Psnr::Identical);
        assert!((ssim(&a, &a, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_one_level_difference() {
        let a = LumaImage::filled(16, 16, 0.5);
        let b = a.map(|v| v + 1.0 / 255.0);
        let p = psnr(&a, &b, 0).unwrap().db();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((p - 48.1308).abs() < 1e-4);
    }

    #[test]
    fn negative_is_dissimilar() {
        let a = textured(20, 20);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg, 0).unwrap() < 1.0);
    }

    #[test]
    fn symmetric() {
        let a = textured(22, 19);
        let b = a.map(|v| (v * 1.1 - 0.03).clamp(0.0, 1.0));
        assert_eq!(psnr(&a, &b, 3).unwrap(), psnr(&b, &a, 3).unwrap());
        assert!((ssim(&a, &b, 3).unwrap() - ssim(&b, &a, 3).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn shave_drops_border() {
        let a = LumaImage::filled(10, 10, 0.5);
        let mut b = a.clone();
        b.set(0, 0, 0.0);
        b.set(9, 4, 1.0);
        assert!(psnr(&a, &b, 1).unwrap().is_identical());
        assert!(!psnr(&a, &b, 0).unwrap().is_identical());
    }

    #[test]
    fn dims_mismatch() {
        let a = LumaImage::filled(12, 12, 0.1);
        let b = LumaImage::filled(12, 13, 0.1);
        assert!(psnr(&a, &b, 0).is_err());
        assert!(ssim(&a, &b, 0).is_err());
    }

    #[test]
    fn gaussian_window_sums_to_one() {
        let taps = gaussian_taps();
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(taps[0], taps[10]);
    }
}
