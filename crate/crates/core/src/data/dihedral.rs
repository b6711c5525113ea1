//! The eight symmetries of the square.
//!
//! Transform `t` applies a horizontal flip when `t >= 4`, then rotates
//! counter-clockwise by `90° · (t % 4)`.

use crate::imaging::LumaImage;

pub const TRANSFORMS: u8 = 8;

/// Transform undoing `t`. Flipped transforms are involutions.
pub fn inverse(t: u8) -> u8 {
    debug_assert!(t < TRANSFORMS);
    if t >= 4 {
        t
    } else {
        (4 - t) % 4
    }
}

/// Output dims of transform `t` applied to an `h × w` grid.
pub fn transformed_dims(t: u8, h: usize, w: usize) -> (usize, usize) {
    if t % 2 == 1 {
        (w, h)
    } else {
        (h, w)
    }
}

/// Source index for each output position, row-major over the output grid.
pub fn source_indices(t: u8, h: usize, w: usize) -> Vec<usize> {
    assert!(t < TRANSFORMS, "transform id {t} out of range");
    let (oh, ow) = transformed_dims(t, h, w);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..oh {
        for x in 0..ow {
            // (sy, sx) in the flipped source
            let (sy, sx) = match t % 4 {
                0 => (y, x),
                1 => (x, w - 1 - y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (h - 1 - x, y),
            };
            let sx = if t >= 4 { w - 1 - sx } else { sx };
            out.push(sy * w + sx);
        }
    }
    out
}

pub fn apply<T: Copy>(t: u8, data: &[T], h: usize, w: usize) -> Vec<T> {
    debug_assert_eq!(data.len(), h * w);
    source_indices(t, h, w).into_iter().map(|i| data[i]).collect()
}

/// Applies transform `t` to an image of any aspect ratio.
pub fn dihedral(img: &LumaImage, t: u8) -> LumaImage {
    let (h, w) = img.dims();
    let (oh, ow) = transformed_dims(t, h, w);
    LumaImage::new(oh, ow, apply(t, img.pixels(), h, w)).expect("permutation keeps pixel count")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marker() -> LumaImage {
        LumaImage::from_fn(3, 3, |y, x| (y * 3 + x + 1) as f64)
    }

    #[test]
    fn hand_enumerated_marker() {
        let expect: [[u8; 9]; 8] = [
            [1, 2, 3, 4, 5, 6, 7, 8, 9],
            [3, 6, 9, 2, 5, 8, 1, 4, 7],
            [9, 8, 7, 6, 5, 4, 3, 2, 1],
            [7, 4, 1, 8, 5, 2, 9, 6, 3],
            [3, 2, 1, 6, 5, 4, 9, 8, 7],
            [1, 4, 7, 2, 5, 8, 3, 6, 9],
            [7, 8, 9, 4, 5, 6, 1, 2, 3],
            [9, 6, 3, 8, 5, 2, 7, 4, 1],
        ];
        for (t, want) in expect.iter().enumerate() {
            let got: Vec<u8> = dihedral(&marker(), t as u8).pixels().iter().map(|&v| v as u8).collect();
            assert_eq!(&got[..], want, "transform {t}");
        }
    }

    #[test]
    fn rot90_has_order_four() {
        let img = LumaImage::from_fn(4, 6, |y, x| (y * 6 + x) as f64);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = dihedral(&cur, 1);
        }
        assert_eq!(cur, img);
    }

    #[test]
    fn inverse_undoes_rectangular() {
        let img = LumaImage::from_fn(3, 5, |y, x| (y * 5 + x) as f64);
        for t in 0..TRANSFORMS {
            let fwd = dihedral(&img, t);
            assert_eq!(fwd.dims(), transformed_dims(t, 3, 5));
            assert_eq!(dihedral(&fwd, inverse(t)), img, "t={t}");
        }
    }
}
