use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Single-channel image, row-major, nominally in `[0, 1]`.
///
/// Intermediate results (bicubic overshoot, residuals) may leave the unit
/// range; [`LumaImage::clamped`] is applied wherever an image is emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaImage {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl LumaImage {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(shape_err!("{h}x{w} image needs {} pixels, got {}", h * w, data.len()));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Self {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Rounds every pixel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.h || left + w > self.w {
            return Err(shape_err!(
                "crop {h}x{w}+{top}+{left} outside {}x{} image",
                self.h,
                self.w
            ));
        }
        let mut data = Vec::with_capacity(h * w);
        for y in top..top + h {
            data.extend_from_slice(&self.data[y * self.w + left..y * self.w + left + w]);
        }
        Ok(Self { h, w, data })
    }

    /// Removes `border` pixels from every side.
    pub fn shave(&self, border: usize) -> Result<Self> {
        if 2 * border >= self.h || 2 * border >= self.w {
            return Err(shape_err!(
                "cannot shave {border} px from a {}x{} image",
                self.h,
                self.w
            ));
        }
        self.crop(border, border, self.h - 2 * border, self.w - 2 * border)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn check_same(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_err!(
                "image dims differ: {}x{} vs {}x{}",
                self.h,
                self.w,
                other.h,
                other.w
            ));
        }
        Ok(())
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor4<T> {
        Tensor4::from_vec(
            Dims::new(1, 1, self.h, self.w),
            self.data.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("dims match by construction")
    }

    /// Reads batch item `n`, channel 0.
    pub fn from_tensor<T: Real>(t: &Tensor4<T>, n: usize) -> Result<Self> {
        let d = t.dims();
        if n >= d.n || d.c != 1 {
            return Err(shape_err!("cannot read image {n} from tensor {d}"));
        }
        Ok(Self {
            h: d.h,
            w: d.w,
            data: t.sample(n).iter().map(|v| v.to_f64()).collect(),
        })
    }
}

/// Crops to the largest dimensions divisible by `scale`, anchored top-left.
pub fn modcrop(img: &LumaImage, scale: usize) -> LumaImage {
    let scale = scale.max(1);
    let h = img.height() - img.height() % scale;
    let w = img.width() - img.width() % scale;
    img.crop(0, 0, h, w).expect("modcrop stays inside the image")
}
