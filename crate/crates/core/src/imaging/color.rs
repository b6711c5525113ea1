//! ITU-R BT.601 studio-swing YCbCr, in the convention of Matlab's `rgb2ycbcr`.

use crate::error::{shape_err, Result};
use crate::imaging::luma::LumaImage;

/// Rows map `[R, G, B]` in `[0, 1]` to `[Y, Cb, Cr]` in `[0, 255]` before the
/// offsets are added.
const FORWARD: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    h: usize,
    w: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(h: usize, w: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != h * w {
            return Err(shape_err!("{h}x{w} image needs {} pixels, got {}", h * w, data.len()));
        }
        Ok(Self { h, w, data })
    }

    pub fn from_gray(img: &LumaImage) -> Self {
        Self {
            h: img.height(),
            w: img.width(),
            data: img.pixels().iter().map(|&v| [v, v, v]).collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> LumaImage {
        LumaImage::new(self.h, self.w, self.data.iter().map(|p| p[c]).collect())
            .expect("dims match by construction")
    }
}

/// Y, Cb and Cr planes, each scaled to `[0, 1]` by dividing by 255.
#[derive(Debug, Clone, PartialEq)]
pub struct YCbCr {
    pub y: LumaImage,
    pub cb: LumaImage,
    pub cr: LumaImage,
}

fn forward(rgb: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, (row, off)) in out.iter_mut().zip(FORWARD.iter().zip(OFFSET)) {
        *o = (off + row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2]) / 255.0;
    }
    out
}

fn inverse_matrix() -> [[f64; 3]; 3] {
    let m = FORWARD;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

/// Studio-swing luminance `Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255`.
pub fn rgb_to_ycbcr_luma(img: &RgbImage) -> LumaImage {
    LumaImage::new(img.h, img.w, img.data.iter().map(|&p| forward(p)[0]).collect())
        .expect("dims match by construction")
}

pub fn rgb_to_ycbcr(img: &RgbImage) -> YCbCr {
    let conv: Vec<[f64; 3]> = img.data.iter().map(|&p| forward(p)).collect();
    let plane = |c: usize| {
        LumaImage::new(img.h, img.w, conv.iter().map(|p| p[c]).collect())
            .expect("dims match by construction")
    };
    YCbCr {
        y: plane(0),
        cb: plane(1),
        cr: plane(2),
    }
}

pub fn ycbcr_to_rgb(ycc: &YCbCr) -> Result<RgbImage> {
    ycc.y.check_same(&ycc.cb)?;
    ycc.y.check_same(&ycc.cr)?;
    let inv = inverse_matrix();
    let data = ycc
        .y
        .pixels()
        .iter()
        .zip(ycc.cb.pixels())
        .zip(ycc.cr.pixels())
        .map(|((&y, &cb), &cr)| {
            let v = [y * 255.0 - OFFSET[0], cb * 255.0 - OFFSET[1], cr * 255.0 - OFFSET[2]];
            let mut rgb = [0.0; 3];
            for (o, row) in rgb.iter_mut().zip(&inv) {
                *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
            }
            rgb
        })
        .collect();
    RgbImage::new(ycc.y.height(), ycc.y.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(rgb: [f64; 3]) -> f64 {
        rgb_to_ycbcr_luma(&RgbImage::new(1, 1, vec![rgb]).unwrap()).get(0, 0)
    }

    #[test]
    fn luma_reference_points() {
        assert!((single([0.0; 3]) - 16.0 / 255.0).abs() < 1e-15);
        assert!((single([1.0; 3]) - 235.0 / 255.0).abs() < 1e-14);
        assert!((single([0.5; 3]) - (16.0 + 109.5) / 255.0).abs() < 1e-14);
    }

    #[test]
    fn gray_has_neutral_chroma() {
        let ycc = rgb_to_ycbcr(&RgbImage::new(1, 1, vec![[0.3; 3]]).unwrap());
        assert!((ycc.cb.get(0, 0) - 128.0 / 255.0).abs() < 1e-12);
        assert!((ycc.cr.get(0, 0) - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trips() {
        let px = vec![[0.1, 0.7, 0.3], [1.0, 0.0, 0.5], [0.25, 0.25, 0.9]];
        let img = RgbImage::new(1, 3, px.clone()).unwrap();
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img)).unwrap();
        for (a, b) in back.pixels().iter().zip(&px) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }
}
