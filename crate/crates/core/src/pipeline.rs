//! Whole-image super-resolution: bicubic upscale plus predicted residual,
//! tiled inference, cascading, back-projection and enhanced prediction.
//!
//! The residual is computed by the network in `f32` and added to the `f64`
//! bicubic image, so a network whose residual is zero reproduces bicubic
//! exactly.

use crate::data::dihedral::{self, TRANSFORMS};
use crate::error::{config_err, Result};
use crate::imaging::{bicubic_resize, LumaImage};
use crate::model::Network;
use crate::tensor::Tensor4;

/// Images larger than this many pixels are processed in tiles.
pub const DEFAULT_TILE_PIXELS: usize = 512 * 512;
pub const DEFAULT_BP_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SrOptions {
    pub scale: usize,
    /// Reach `scale` by repeated passes of `cascade_base`.
    pub cascade: bool,
    pub cascade_base: usize,
    pub back_projection_iters: usize,
    pub enhanced: bool,
    /// Pixel budget per network call; `None` disables tiling.
    pub tile_pixels: Option<usize>,
}

impl SrOptions {
    pub fn new(scale: usize) -> Self {
        Self {
            scale,
            cascade: false,
            cascade_base: 2,
            back_projection_iters: 0,
            enhanced: false,
            tile_pixels: Some(DEFAULT_TILE_PIXELS),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(config_err!("scale must be at least 2, got {}", self.scale));
        }
        if self.cascade {
            cascade_steps(self.scale, self.cascade_base)?;
        }
        Ok(())
    }
}

/// Network residual for a whole (already upscaled) image, in tiles whose
/// context margin equals the receptive radius so tile seams cannot show.
pub fn residual(net: &Network<f32>, up: &LumaImage, tile_pixels: Option<usize>) -> Result<LumaImage> {
    let (h, w) = up.dims();
    let r = net.spec().receptive_radius();
    let core = match tile_pixels {
        Some(budget) if h * w > budget => {
            let side = (budget as f64).sqrt() as usize;
            side.saturating_sub(2 * r).max(16)
        }
        _ => h.max(w),
    };
    let mut out = LumaImage::filled(h, w, 0.0);
    for y0 in (0..h).step_by(core) {
        for x0 in (0..w).step_by(core) {
            let (y1, x1) = ((y0 + core).min(h), (x0 + core).min(w));
            let (cy0, cx0) = (y0.saturating_sub(r), x0.saturating_sub(r));
            let (cy1, cx1) = ((y1 + r).min(h), (x1 + r).min(w));
            let ctx = up.crop(cy0, cx0, cy1 - cy0, cx1 - cx0)?;
            let t: Tensor4<f32> = ctx.to_tensor();
            let res = LumaImage::from_tensor(&net.forward_residual(&t)?, 0)?;
            for y in y0..y1 {
                for x in x0..x1 {
                    out.set(y, x, res.get(y - cy0, x - cx0));
                }
            }
        }
    }
    if !net.spec().global_residual {
        // Without the global skip the network output is the image itself.
        return out.zip_map(up, |o, u| o - u);
    }
    Ok(out)
}

/// `up + residual(up)`, not clamped.
pub fn predict(net: &Network<f32>, up: &LumaImage, tile_pixels: Option<usize>) -> Result<LumaImage> {
    let res = residual(net, up, tile_pixels)?;
    up.zip_map(&res, |u, r| u + r)
}

/// Enhanced prediction on an upscaled image: the residual is averaged over
/// the eight dihedral transforms (inverse-transformed, summed in `t` order).
pub fn predict_enhanced(net: &Network<f32>, up: &LumaImage, tile_pixels: Option<usize>) -> Result<LumaImage> {
    let (h, w) = up.dims();
    let mut acc = vec![0.0; h * w];
    for t in 0..TRANSFORMS {
        let res = residual(net, &dihedral::dihedral(up, t), tile_pixels)?;
        let back = dihedral::dihedral(&res, dihedral::inverse(t));
        for (a, v) in acc.iter_mut().zip(back.pixels()) {
            *a += v;
        }
    }
    let mean = LumaImage::new(h, w, acc.into_iter().map(|v| v / TRANSFORMS as f64).collect())?;
    up.zip_map(&mean, |u, r| u + r)
}

/// One upscaling pass without clamping.
fn pass(net: &Network<f32>, lr: &LumaImage, scale: usize, enhanced: bool, tile: Option<usize>) -> Result<LumaImage> {
    let up = bicubic_resize(lr, scale as f64)?;
    if enhanced {
        predict_enhanced(net, &up, tile)
    } else {
        predict(net, &up, tile)
    }
}

/// Bicubic upscale plus predicted residual, clamped to `[0, 1]`.
pub fn superresolve(net: &Network<f32>, lr: &LumaImage, scale: usize, tile_pixels: Option<usize>) -> Result<LumaImage> {
    Ok(pass(net, lr, scale, false, tile_pixels)?.clamped())
}

/// Enhanced prediction from the LR image, clamped.
pub fn enhanced_predict(net: &Network<f32>, lr: &LumaImage, scale: usize, tile_pixels: Option<usize>) -> Result<LumaImage> {
    Ok(pass(net, lr, scale, true, tile_pixels)?.clamped())
}

/// Number of `base` passes giving `total`.
pub fn cascade_steps(total: usize, base: usize) -> Result<usize> {
    if base < 2 || total < 2 {
        return Err(config_err!("cascade needs factors of at least 2 (total {total}, base {base})"));
    }
    let (mut rest, mut steps) = (total, 0);
    while rest % base == 0 {
        rest /= base;
        steps += 1;
    }
    if rest != 1 {
        return Err(config_err!("x{total} is not a power of x{base}"));
    }
    Ok(steps)
}

/// Repeated `base` passes; intermediate stages are not clamped.
pub fn cascade(
    net: &Network<f32>,
    lr: &LumaImage,
    total: usize,
    base: usize,
    enhanced: bool,
    tile_pixels: Option<usize>,
) -> Result<LumaImage> {
    let steps = cascade_steps(total, base)?;
    let mut x = lr.clone();
    for _ in 0..steps {
        x = pass(net, &x, base, enhanced, tile_pixels)?;
    }
    Ok(x.clamped())
}

/// `‖bicubic_down(hr) − lr‖₂`.
pub fn consistency_residual(hr: &LumaImage, lr: &LumaImage, scale: usize) -> Result<f64> {
    let down = bicubic_resize(hr, 1.0 / scale as f64)?;
    let d = down.zip_map(lr, |a, b| a - b)?;
    Ok(d.pixels().iter().map(|v| v * v).sum::<f64>().sqrt())
}

fn check_bp_dims(hr: &LumaImage, lr: &LumaImage, scale: usize) -> Result<()> {
    let (h, w) = hr.dims();
    let (lh, lw) = lr.dims();
    if h != lh * scale || w != lw * scale {
        return Err(crate::error::shape_err!(
            "back-projection needs hr = {scale} x lr, got {h}x{w} and {lh}x{lw}"
        ));
    }
    Ok(())
}

/// Iterative back-projection:
/// `hr ← clamp(hr + bicubic_up(lr − bicubic_down(hr)))`.
pub fn back_project(hr: &LumaImage, lr: &LumaImage, scale: usize, iters: usize) -> Result<LumaImage> {
    Ok(back_project_traced(hr, lr, scale, iters)?.0)
}

/// As [`back_project`], also returning the consistency residual before the
/// first and after every iteration.
pub fn back_project_traced(hr: &LumaImage, lr: &LumaImage, scale: usize, iters: usize) -> Result<(LumaImage, Vec<f64>)> {
    check_bp_dims(hr, lr, scale)?;
    let mut cur = hr.clone();
    let mut trace = vec![consistency_residual(&cur, lr, scale)?];
    for _ in 0..iters {
        let down = bicubic_resize(&cur, 1.0 / scale as f64)?;
        let err = lr.zip_map(&down, |a, b| a - b)?;
        let up = bicubic_resize(&err, scale as f64)?;
        cur = cur.zip_map(&up, |a, b| a + b)?.clamped();
        trace.push(consistency_residual(&cur, lr, scale)?);
    }
    Ok((cur, trace))
}

/// Cascade / enhanced prediction as configured, clamp, then back-projection.
pub fn render(net: &Network<f32>, lr: &LumaImage, opts: &SrOptions) -> Result<LumaImage> {
    opts.validate()?;
    let out = if opts.cascade {
        cascade(net, lr, opts.scale, opts.cascade_base, opts.enhanced, opts.tile_pixels)?
    } else {
        pass(net, lr, opts.scale, opts.enhanced, opts.tile_pixels)?.clamped()
    };
    if opts.back_projection_iters > 0 {
        return back_project(&out, lr, opts.scale, opts.back_projection_iters);
    }
    Ok(out)
}

/// Clamped bicubic upscale, the reference every learned output is compared to.
pub fn bicubic_baseline(lr: &LumaImage, scale: usize) -> Result<LumaImage> {
    Ok(bicubic_resize(lr, scale as f64)?.clamped())
}
