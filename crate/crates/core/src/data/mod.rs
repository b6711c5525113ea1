//! Training pairs: grid patch extraction, dihedral augmentation, the
//! multi-scale external set and internal examples from an image pyramid.

pub mod dihedral;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, shape_err, Error, Result};
use crate::imaging::{bicubic_resize, degrade, modcrop, LumaImage};
use crate::tensor::{Dims, Tensor4};

pub const PATCH_SIZE: usize = 41;

/// Patch values are rounded to this grid so that `input + target` equals the
/// stored HR crop exactly in `f32`.
const GRID: f64 = (1u64 << 22) as f64;

fn snap(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchSource {
    External,
    Internal,
}

/// An aligned training sample: bicubic input and residual target.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub size: usize,
    pub input: Vec<f32>,
    pub target: Vec<f32>,
    pub scale: usize,
    pub source: PatchSource,
    /// Dihedral transform applied relative to the grid-extracted pair.
    pub transform_id: u8,
}

impl PatchPair {
    /// `input + target`, the HR crop at stored precision.
    pub fn hr(&self) -> Vec<f32> {
        self.input.iter().zip(&self.target).map(|(a, b)| a + b).collect()
    }

    /// Applies dihedral transform `t` on top of the current one.
    pub fn transformed(&self, t: u8) -> Self {
        let n = self.size;
        let composed = compose(t, self.transform_id);
        Self {
            input: dihedral::apply(t, &self.input, n, n),
            target: dihedral::apply(t, &self.target, n, n),
            transform_id: composed,
            ..self.clone()
        }
    }
}

/// Id of "apply `first`, then `second`".
pub fn compose(second: u8, first: u8) -> u8 {
    // Compose on a marker with distinct values and look the result up.
    let n = 3;
    let base: Vec<usize> = (0..n * n).collect();
    let both = dihedral::apply(second, &dihedral::apply(first, &base, n, n), n, n);
    (0..dihedral::TRANSFORMS)
        .find(|&t| dihedral::apply(t, &base, n, n) == both)
        .expect("dihedral group is closed")
}

/// `(floor((h - size)/stride) + 1) · (floor((w - size)/stride) + 1)`, or 0
/// when the image is smaller than a patch.
pub fn patch_count(h: usize, w: usize, size: usize, stride: usize) -> usize {
    if h < size || w < size || stride == 0 {
        return 0;
    }
    ((h - size) / stride + 1) * ((w - size) / stride + 1)
}

/// Grid-aligned patches starting at `(0, 0)`; trailing pixels that do not
/// fill a full step are dropped.
pub fn extract_patches(
    hr: &LumaImage,
    input: &LumaImage,
    size: usize,
    stride: usize,
    scale: usize,
    source: PatchSource,
) -> Result<Vec<PatchPair>> {
    hr.check_same(input)?;
    if size == 0 || stride == 0 {
        return Err(config_err!("patch size and stride must be positive"));
    }
    let (h, w) = hr.dims();
    let mut out = Vec::with_capacity(patch_count(h, w, size, stride));
    if h < size || w < size {
        return Ok(out);
    }
    for top in (0..=h - size).step_by(stride) {
        for left in (0..=w - size).step_by(stride) {
            let mut inp = Vec::with_capacity(size * size);
            let mut tgt = Vec::with_capacity(size * size);
            for y in top..top + size {
                for x in left..left + size {
                    let i = snap(input.get(y, x));
                    inp.push(i as f32);
                    tgt.push((snap(hr.get(y, x)) - i) as f32);
                }
            }
            out.push(PatchPair {
                size,
                input: inp,
                target: tgt,
                scale,
                source,
                transform_id: 0,
            });
        }
    }
    Ok(out)
}

fn augment_all(pairs: &mut [PatchPair], rng: &mut ChaCha8Rng) {
    for p in pairs {
        let t = rng.random_range(0..dihedral::TRANSFORMS);
        *p = p.transformed(t);
    }
}

/// Pairs for one HR image at one scale: modcrop, bicubic down by `1/scale`
/// and back up, residual targets.
pub fn pairs_for_scale(
    hr: &LumaImage,
    scale: usize,
    size: usize,
    stride: usize,
    source: PatchSource,
) -> Result<Vec<PatchPair>> {
    let hr = modcrop(hr, scale);
    if hr.height() < size || hr.width() < size {
        return Ok(Vec::new());
    }
    let input = degrade(&hr, scale)?;
    extract_patches(&hr, &input, size, stride, scale, source)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSetConfig {
    pub scales: Vec<usize>,
    pub patch_size: usize,
    pub stride: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for ExternalSetConfig {
    fn default() -> Self {
        Self {
            scales: vec![2, 3, 4],
            patch_size: PATCH_SIZE,
            stride: PATCH_SIZE,
            augment: true,
            seed: 0,
        }
    }
}

/// Pairs from every image at every scale, in image-major then scale order,
/// each given one random dihedral transform when `augment` is set.
pub fn build_external_set(images: &[LumaImage], cfg: &ExternalSetConfig) -> Result<Vec<PatchPair>> {
    if images.is_empty() {
        return Err(Error::EmptySet("external corpus has no images".into()));
    }
    if cfg.scales.is_empty() || cfg.scales.contains(&0) {
        return Err(config_err!("external scales must be non-empty and positive"));
    }
    let mut out = Vec::new();
    for img in images {
        for &s in &cfg.scales {
            out.extend(pairs_for_scale(img, s, cfg.patch_size, cfg.stride, PatchSource::External)?);
        }
    }
    if cfg.augment {
        augment_all(&mut out, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    }
    Ok(out)
}

/// How internal examples are drawn from a test image.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSpec {
    /// Level scales, descending, first normally 1.
    pub scales: Vec<f64>,
    pub stride: usize,
    /// Use every level in `scales`; otherwise only the first.
    pub scale_augmentation: bool,
    /// When set, the stride is lowered (down to 1) until at least this many
    /// examples are produced.
    pub target_examples: Option<usize>,
    pub patch_size: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self {
            scales: vec![1.0, 0.9, 0.8, 0.7, 0.6],
            stride: 20,
            scale_augmentation: true,
            target_examples: Some(10_000),
            patch_size: PATCH_SIZE,
            augment: true,
            seed: 0,
        }
    }
}

impl PyramidSpec {
    /// Fixed-stride pyramid without scale augmentation or stride tuning.
    pub fn single_level(stride: usize) -> Self {
        Self {
            scales: vec![1.0],
            stride,
            scale_augmentation: false,
            target_examples: None,
            augment: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(config_err!("pyramid needs at least one scale"));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(config_err!("pyramid scales must lie in (0, 1]: {:?}", self.scales));
        }
        if self.scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(config_err!("pyramid scales must be strictly descending: {:?}", self.scales));
        }
        if self.stride == 0 || self.patch_size == 0 {
            return Err(config_err!("pyramid stride and patch size must be positive"));
        }
        Ok(())
    }

    fn level_factors(&self) -> &[f64] {
        if self.scale_augmentation {
            &self.scales
        } else {
            &self.scales[..1]
        }
    }
}

/// HR levels of the pyramid, modcropped to `scale`.
pub fn pyramid_levels(lr: &LumaImage, spec: &PyramidSpec, scale: usize) -> Result<Vec<LumaImage>> {
    spec.validate()?;
    spec.level_factors()
        .iter()
        .map(|&f| {
            let level = if f == 1.0 { lr.clone() } else { bicubic_resize(lr, f)? };
            Ok(modcrop(&level, scale))
        })
        .collect()
}

/// The stride actually used for `lr` under `spec`.
pub fn effective_stride(levels: &[LumaImage], spec: &PyramidSpec) -> usize {
    let count = |s: usize| -> usize {
        levels
            .iter()
            .map(|l| patch_count(l.height(), l.width(), spec.patch_size, s))
            .sum()
    };
    let mut stride = spec.stride;
    if let Some(target) = spec.target_examples {
        while stride > 1 && count(stride) < target {
            stride -= 1;
        }
    }
    stride
}

/// Internal LR/HR pairs: every pyramid level is treated as HR, re-degraded by
/// `scale` with the bicubic operator and cut into patches.
pub fn extract_internal_examples(lr: &LumaImage, spec: &PyramidSpec, scale: usize) -> Result<Vec<PatchPair>> {
    if scale == 0 {
        return Err(config_err!("scale must be positive"));
    }
    let levels = pyramid_levels(lr, spec, scale)?;
    let stride = effective_stride(&levels, spec);
    let mut out = Vec::new();
    for level in &levels {
        out.extend(pairs_for_scale(level, scale, spec.patch_size, stride, PatchSource::Internal)?);
    }
    if out.is_empty() {
        let (h, w) = lr.dims();
        return Err(Error::EmptySet(format!(
            "{h}x{w} image yields no {0}x{0} internal examples",
            spec.patch_size
        )));
    }
    if spec.augment {
        augment_all(&mut out, &mut ChaCha8Rng::seed_from_u64(spec.seed));
    }
    Ok(out)
}

/// Seeded shuffle, used to mix pair sources into one stream.
pub fn shuffled(mut pairs: Vec<PatchPair>, seed: u64) -> Vec<PatchPair> {
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pairs
}

/// Stacks the inputs and targets of `pairs` into two `n×1×s×s` tensors.
pub fn batch_tensors(pairs: &[&PatchPair]) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let first = pairs.first().ok_or_else(|| shape_err!("empty batch"))?;
    let s = first.size;
    if pairs.iter().any(|p| p.size != s) {
        return Err(shape_err!("mixed patch sizes in one batch"));
    }
    let dims = Dims::new(pairs.len(), 1, s, s);
    let input = pairs.iter().flat_map(|p| p.input.iter().copied()).collect();
    let target = pairs.iter().flat_map(|p| p.target.iter().copied()).collect();
    Ok((Tensor4::from_vec(dims, input)?, Tensor4::from_vec(dims, target)?))
}
