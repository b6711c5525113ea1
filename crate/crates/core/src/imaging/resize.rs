//! Bicubic resampling in the convention of Matlab's `imresize`.
//!
//! Keys cubic kernel with `a = -0.5`. When shrinking, the kernel is stretched
//! by `1/factor` (antialiasing). Sample positions follow
//! `u = x/factor + 0.5 (1 - 1/factor)` in 1-based coordinates, and taps that
//! fall outside the image are mirrored with the edge pixel repeated
//! (`1, 2, …, n, n, …, 1`), which is what Matlab does.

use crate::error::{config_err, Result};
use crate::imaging::luma::LumaImage;

const KERNEL_WIDTH: f64 = 4.0;

fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Per-output-sample source indices and normalized weights along one axis.
#[derive(Debug, Clone)]
struct Contributions {
    taps: usize,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl Contributions {
    fn new(in_len: usize, out_len: usize, scale: f64) -> Self {
        let (kernel_width, shrink) = if scale < 1.0 {
            (KERNEL_WIDTH / scale, scale)
        } else {
            (KERNEL_WIDTH, 1.0)
        };
        let taps = kernel_width.ceil() as usize + 2;
        let period = 2 * in_len as i64;
        let mut indices = Vec::with_capacity(out_len * taps);
        let mut weights = Vec::with_capacity(out_len * taps);
        for x in 1..=out_len {
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - kernel_width / 2.0).floor();
            let row: Vec<f64> = (0..taps)
                .map(|j| shrink * cubic(shrink * (u - (left + j as f64))))
                .collect();
            let sum: f64 = row.iter().sum();
            for (j, w) in row.into_iter().enumerate() {
                // 1-based tap position, mirrored into 1..=in_len
                let pos = left as i64 + j as i64;
                let m = (pos - 1).rem_euclid(period);
                let src = if m < in_len as i64 { m } else { period - 1 - m };
                indices.push(src as usize);
                weights.push(w / sum);
            }
        }
        Self {
            taps,
            indices,
            weights,
        }
    }
}

fn resize_rows(src: &[f64], h: usize, w: usize, c: &Contributions, out_h: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_h * w];
    for oy in 0..out_h {
        let dst = &mut out[oy * w..(oy + 1) * w];
        for t in 0..c.taps {
            let k = oy * c.taps + t;
            let (sy, wt) = (c.indices[k], c.weights[k]);
            let line = &src[sy * w..(sy + 1) * w];
            for (d, &s) in dst.iter_mut().zip(line) {
                *d += wt * s;
            }
        }
    }
    debug_assert_eq!(src.len(), h * w);
    out
}

fn resize_cols(src: &[f64], h: usize, w: usize, c: &Contributions, out_w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * out_w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        let dst = &mut out[y * out_w..(y + 1) * out_w];
        for (ox, d) in dst.iter_mut().enumerate() {
            let base = ox * c.taps;
            let mut acc = 0.0;
            for t in 0..c.taps {
                acc += c.weights[base + t] * line[c.indices[base + t]];
            }
            *d = acc;
        }
    }
    out
}

/// Output length for a given input length and factor.
pub fn scaled_len(len: usize, factor: f64) -> usize {
    (len as f64 * factor).round() as usize
}

/// Resizes by `factor`; the output is `round(h·factor) × round(w·factor)`.
pub fn bicubic_resize(img: &LumaImage, factor: f64) -> Result<LumaImage> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(config_err!("resize factor must be positive, got {factor}"));
    }
    let (h, w) = img.dims();
    let (out_h, out_w) = (scaled_len(h, factor), scaled_len(w, factor));
    if out_h == 0 || out_w == 0 {
        return Err(config_err!("factor {factor} shrinks {h}x{w} to nothing"));
    }
    let rows = Contributions::new(h, out_h, factor);
    let cols = Contributions::new(w, out_w, factor);
    let tmp = resize_rows(img.pixels(), h, w, &rows, out_h);
    let out = resize_cols(&tmp, out_h, w, &cols, out_w);
    LumaImage::new(out_h, out_w, out)
}

/// Downscales by `1/scale` then upscales by `scale`: the degradation used to
/// build network inputs. `img` should already be modcropped.
pub fn degrade(img: &LumaImage, scale: usize) -> Result<LumaImage> {
    let lr = bicubic_resize(img, 1.0 / scale as f64)?;
    bicubic_resize(&lr, scale as f64)
}
