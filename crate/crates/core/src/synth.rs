//! Seeded synthetic luminance images: textured families with sharp,
//! antialiased edges, tiled periodic motifs and white noise. All outputs are
//! quantized to 8 bits like decoded image files.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::LumaImage;

/// Sub-samples per pixel side when rendering.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Stripes,
    Checker,
    Dots,
    Rectangles,
    Rings,
    Blobs,
    Bars,
    Zigzag,
    BandNoise,
    HalfPlanes,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Stripes,
        Family::Checker,
        Family::Dots,
        Family::Rectangles,
        Family::Rings,
        Family::Blobs,
        Family::Bars,
        Family::Zigzag,
        Family::BandNoise,
        Family::HalfPlanes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Stripes => "stripes",
            Family::Checker => "checker",
            Family::Dots => "dots",
            Family::Rectangles => "rectangles",
            Family::Rings => "rings",
            Family::Blobs => "blobs",
            Family::Bars => "bars",
            Family::Zigzag => "zigzag",
            Family::BandNoise => "band-noise",
            Family::HalfPlanes => "half-planes",
        }
    }
}

/// Box-filtered rendering of a continuous scene `f(x, y)`.
fn render(h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> LumaImage {
    let ss = SUPERSAMPLE;
    let inv = 1.0 / ss as f64;
    LumaImage::from_fn(h, w, |y, x| {
        let mut acc = 0.0;
        for sy in 0..ss {
            for sx in 0..ss {
                acc += f(x as f64 + (sx as f64 + 0.5) * inv, y as f64 + (sy as f64 + 0.5) * inv);
            }
        }
        acc * inv * inv
    })
    .quantized()
}

fn tone(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let lo = rng.random_range(0.05..0.4);
    let hi = rng.random_range(0.6..0.95);
    (lo, hi)
}

fn frac(v: f64) -> f64 {
    v - v.floor()
}

/// An `h × w` image of `family`, deterministic in `seed`.
pub fn textured(family: Family, h: usize, w: usize, seed: u64) -> LumaImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = tone(&mut rng);
    let mix = move |on: bool| if on { hi } else { lo };
    match family {
        Family::Stripes => {
            let a = rng.random_range(0.0..PI);
            let p = rng.random_range(5.0..12.0);
            let duty = rng.random_range(0.3..0.7);
            let (c, s) = (a.cos(), a.sin());
            render(h, w, |x, y| mix(frac((x * c + y * s) / p) < duty))
        }
        Family::Checker => {
            let a = rng.random_range(0.0..PI / 2.0);
            let p = rng.random_range(6.0..14.0);
            let (c, s) = (a.cos(), a.sin());
            render(h, w, |x, y| {
                let u = (x * c + y * s) / p;
                let v = (-x * s + y * c) / p;
                mix((u.floor() as i64 + v.floor() as i64).rem_euclid(2) == 0)
            })
        }
        Family::Dots => {
            let p = rng.random_range(7.0..13.0);
            let r = p * rng.random_range(0.2..0.4);
            let a = rng.random_range(0.0..PI / 2.0);
            let (c, s) = (a.cos(), a.sin());
            render(h, w, |x, y| {
                let u = frac((x * c + y * s) / p) - 0.5;
                let v = frac((-x * s + y * c) / p) - 0.5;
                mix((u * u + v * v).sqrt() * p < r)
            })
        }
        Family::Rectangles => {
            let rects: Vec<(f64, f64, f64, f64, f64)> = (0..(h * w / 200).max(8))
                .map(|_| {
                    let x0 = rng.random_range(0.0..w as f64);
                    let y0 = rng.random_range(0.0..h as f64);
                    let rw = rng.random_range(3.0..(w as f64 / 4.0).max(4.0));
                    let rh = rng.random_range(3.0..(h as f64 / 4.0).max(4.0));
                    (x0, y0, rw, rh, rng.random_range(lo..hi))
                })
                .collect();
            render(h, w, |x, y| {
                let mut v = 0.5 * (lo + hi);
                for &(x0, y0, rw, rh, g) in &rects {
                    if x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh {
                        v = g;
                    }
                }
                v
            })
        }
        Family::Rings => {
            let cx = rng.random_range(0.0..w as f64);
            let cy = rng.random_range(0.0..h as f64);
            let p = rng.random_range(5.0..11.0);
            render(h, w, |x, y| mix(frac(((x - cx).powi(2) + (y - cy).powi(2)).sqrt() / p) < 0.5))
        }
        Family::Blobs => {
            let bumps: Vec<(f64, f64, f64, f64)> = (0..12)
                .map(|_| {
                    (
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.0..h as f64),
                        rng.random_range(4.0..14.0),
                        rng.random_range(-0.35..0.35),
                    )
                })
                .collect();
            render(h, w, |x, y| {
                let mut v = 0.5;
                for &(bx, by, s, a) in &bumps {
                    v += a * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * s * s)).exp();
                }
                v.clamp(0.0, 1.0)
            })
        }
        Family::Bars => {
            let cell = rng.random_range(6.0..10.0);
            let cols = (w as f64 / cell).ceil() as usize + 1;
            let rows = (h as f64 / cell).ceil() as usize + 1;
            let kinds: Vec<u8> = (0..rows * cols).map(|_| rng.random_range(0..3)).collect();
            let thick = rng.random_range(0.25..0.4);
            render(h, w, |x, y| {
                let (cx, cy) = ((x / cell) as usize, (y / cell) as usize);
                let (u, v) = (frac(x / cell), frac(y / cell));
                let on = match kinds[cy * cols + cx] {
                    0 => (v - 0.5).abs() < thick / 2.0 && (0.15..0.85).contains(&u),
                    1 => (u - 0.5).abs() < thick / 2.0 && (0.15..0.85).contains(&v),
                    _ => false,
                };
                mix(!on)
            })
        }
        Family::Zigzag => {
            let p = rng.random_range(8.0..16.0);
            let amp = rng.random_range(2.0..6.0);
            let band = rng.random_range(5.0..10.0);
            render(h, w, |x, y| {
                let tri = (2.0 * frac(x / p) - 1.0).abs() * amp;
                mix(frac((y + tri) / band) < 0.5)
            })
        }
        Family::BandNoise => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..16)
                .map(|_| {
                    let a = rng.random_range(0.0..2.0 * PI);
                    let f = rng.random_range(0.25..0.6);
                    (f * a.cos(), f * a.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.5..1.0))
                })
                .collect();
            let norm: f64 = waves.iter().map(|w| w.3).sum::<f64>();
            render(h, w, |x, y| {
                let s: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum();
                0.5 + 0.9 * (hi - lo) * s / norm
            })
        }
        Family::HalfPlanes => {
            let lines: Vec<(f64, f64, f64)> = (0..14)
                .map(|_| {
                    let a = rng.random_range(0.0..2.0 * PI);
                    let px = rng.random_range(0.0..w as f64);
                    let py = rng.random_range(0.0..h as f64);
                    (a.cos(), a.sin(), -(a.cos() * px + a.sin() * py))
                })
                .collect();
            let span = hi - lo;
            render(h, w, |x, y| {
                let k = lines.iter().filter(|&&(a, b, c)| a * x + b * y + c > 0.0).count();
                lo + span * ((k * 7) % 5) as f64 / 4.0
            })
        }
    }
}

/// A random `motif × motif` pattern of shapes, tiled over `h × w`.
pub fn periodic(h: usize, w: usize, motif: usize, seed: u64) -> LumaImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = motif.max(1) as f64;
    let r_max = (m / 3.0).max(2.0);
    let (lo, hi) = tone(&mut rng);
    let shapes: Vec<(f64, f64, f64, f64, bool, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..m),
                rng.random_range(0.0..m),
                rng.random_range(1.5..r_max),
                rng.random_range(1.5..r_max),
                rng.random_bool(0.5),
                rng.random_range(lo..hi),
            )
        })
        .collect();
    let base = 0.5 * (lo + hi);
    render(h, w, |x, y| {
        let (u, v) = (x.rem_euclid(m), y.rem_euclid(m));
        let mut val = base;
        for &(cx, cy, rx, ry, disk, g) in &shapes {
            // wrapped offsets keep the motif seamless
            let dx = (u - cx + m / 2.0).rem_euclid(m) - m / 2.0;
            let dy = (v - cy + m / 2.0).rem_euclid(m) - m / 2.0;
            let inside = if disk {
                (dx / rx).powi(2) + (dy / ry).powi(2) < 1.0
            } else {
                dx.abs() < rx && dy.abs() < ry
            };
            if inside {
                val = g;
            }
        }
        val
    })
}

/// Independent uniform pixels, quantized to 8 bits.
pub fn white_noise(h: usize, w: usize, seed: u64) -> LumaImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w).map(|_| rng.random::<f64>()).collect();
    LumaImage::new(h, w, data).expect("dims match").quantized()
}
