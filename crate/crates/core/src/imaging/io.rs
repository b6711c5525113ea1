//! PNG read/write (8-bit gray and RGB) and the golden-vector file format.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::imaging::color::{rgb_to_ycbcr_luma, RgbImage};
use crate::imaging::luma::LumaImage;

/// A decoded image, keeping whether the file was grayscale.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Gray(LumaImage),
    Rgb(RgbImage),
}

impl Loaded {
    /// Luminance: the plane itself for gray files, studio-swing Y for color.
    pub fn luma(&self) -> LumaImage {
        match self {
            Loaded::Gray(g) => g.clone(),
            Loaded::Rgb(c) => rgb_to_ycbcr_luma(c),
        }
    }

    /// Luminance rounded to 8-bit levels, as an 8-bit YCbCr conversion
    /// stores it. Ground truth for evaluation is read this way.
    pub fn luma8(&self) -> LumaImage {
        match self {
            Loaded::Gray(g) => g.clone(),
            Loaded::Rgb(c) => rgb_to_ycbcr_luma(c).quantized(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Loaded::Gray(g) => g.dims(),
            Loaded::Rgb(c) => c.dims(),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Loaded> {
    let img = image::open(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
            let g = img.to_luma8();
            Loaded::Gray(LumaImage::new(
                h,
                w,
                g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
            )?)
        }
        _ => {
            let c = img.to_rgb8();
            let data = c
                .as_raw()
                .chunks_exact(3)
                .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
                .collect();
            Loaded::Rgb(RgbImage::new(h, w, data)?)
        }
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_luma(img: &LumaImage, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = img.dims();
    let raw: Vec<u8> = img.pixels().iter().map(|&v| to_u8(v)).collect();
    let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Format("gray buffer size mismatch".into()))?;
    buf.save(path.as_ref())?;
    Ok(())
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = img.dims();
    let raw: Vec<u8> = img.pixels().iter().flat_map(|p| p.map(to_u8)).collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Format("rgb buffer size mismatch".into()))?;
    buf.save(path.as_ref())?;
    Ok(())
}

pub const GOLDEN_MAGIC: &[u8; 8] = b"DPNGOLD\0";

/// A frozen resize case: input, factor and expected output.
///
/// Layout, little-endian: magic `DPNGOLD\0`, `u32 h`, `u32 w`, `f64 factor`,
/// `u32 out_h`, `u32 out_w`, then `h*w` input `f64`s and `out_h*out_w`
/// expected `f64`s, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenResize {
    pub input: LumaImage,
    pub factor: f64,
    pub expected: LumaImage,
}

impl GoldenResize {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = GOLDEN_MAGIC.to_vec();
        let (h, w) = self.input.dims();
        let (oh, ow) = self.expected.dims();
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&self.factor.to_le_bytes());
        out.extend_from_slice(&(oh as u32).to_le_bytes());
        out.extend_from_slice(&(ow as u32).to_le_bytes());
        for v in self.input.pixels().iter().chain(self.expected.pixels()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = || Error::Format("malformed golden file".into());
        if buf.len() < 32 || &buf[..8] != GOLDEN_MAGIC {
            return Err(bad());
        }
        let u32_at = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap()) as usize;
        let (h, w) = (u32_at(8), u32_at(12));
        let factor = f64::from_le_bytes(buf[16..24].try_into().unwrap());
        let (oh, ow) = (u32_at(24), u32_at(28));
        let body = &buf[32..];
        if body.len() != (h * w + oh * ow) * 8 {
            return Err(bad());
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            input: LumaImage::new(h, w, vals[..h * w].to_vec())?,
            factor,
            expected: LumaImage::new(oh, ow, vals[h * w..].to_vec())?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_gray_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let img = LumaImage::from_fn(5, 7, |y, x| ((y * 7 + x) * 6) as f64 / 255.0);
        save_luma(&img, &p).unwrap();
        match load_image(&p).unwrap() {
            Loaded::Gray(g) => assert_eq!(g, img),
            other => panic!("expected gray, got {other:?}"),
        }
    }

    #[test]
    fn png_rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let data = (0..12)
            .map(|i| [i as f64 / 255.0, (20 + i) as f64 / 255.0, (200 - i) as f64 / 255.0])
            .collect();
        let img = RgbImage::new(3, 4, data).unwrap();
        save_rgb(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), Loaded::Rgb(img));
    }

    #[test]
    fn golden_round_trip() {
        let g = GoldenResize {
            input: LumaImage::from_fn(2, 3, |y, x| (y + x) as f64),
            factor: 0.5,
            expected: LumaImage::filled(1, 2, 0.25),
        };
        assert_eq!(GoldenResize::from_bytes(&g.to_bytes()).unwrap(), g);
        assert!(GoldenResize::from_bytes(&g.to_bytes()[..40]).is_err());
    }
}
