//! 3×3 convolution with zero padding 1, forward and backward.
//!
//! Each batch item is lowered with im2col into a `(in_ch*9) × pixels` matrix
//! and multiplied by the `(out_ch × in_ch*9)` weight matrix. Rows of the image
//! are processed in chunks so the lowered buffer stays bounded for whole-image
//! inference. Batch items are processed in parallel; parameter gradients are
//! summed in batch order so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Real, Tensor4};

pub const KERNEL: usize = 3;
pub const PAD: usize = 1;
const TAPS: usize = KERNEL * KERNEL;

/// Upper bound on im2col buffer elements per batch item.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    /// `(out_ch, in_ch, 3, 3)`
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            weights: Tensor4::zeros(Dims::new(out_ch, in_ch, KERNEL, KERNEL)),
            bias: vec![T::ZERO; out_ch],
        }
    }

    pub fn new(weights: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let d = weights.dims();
        if d.h != KERNEL || d.w != KERNEL {
            return Err(shape_err!("conv kernels must be 3x3, got {}x{}", d.h, d.w));
        }
        if bias.len() != d.n {
            return Err(shape_err!(
                "{} biases for {} output channels",
                bias.len(),
                d.n
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims().c
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims().n
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> ConvParams<U> {
        ConvParams {
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|b| U::from_f64(b.to_f64())).collect(),
        }
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.weights.dims() == other.weights.dims() && self.bias.len() == other.bias.len()
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.weights.data_mut().iter_mut().zip(other.weights.data()) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

fn rows_per_chunk(taps_rows: usize, h: usize, w: usize) -> usize {
    (COL_BUDGET / (taps_rows * w).max(1)).clamp(1, h.max(1))
}

/// Lowers rows `r0..r1` of one `(cin, h, w)` image into `col`, laid out as
/// `(cin*9) × ((r1-r0)*w)` row-major.
fn im2col<T: Real>(src: &[T], cin: usize, h: usize, w: usize, r0: usize, r1: usize, col: &mut [T]) {
    let ncols = (r1 - r0) * w;
    for i in 0..cin {
        let plane = &src[i * h * w..(i + 1) * h * w];
        for dy in 0..KERNEL {
            for dx in 0..KERNEL {
                let row = (i * TAPS + dy * KERNEL + dx) * ncols;
                let dst = &mut col[row..row + ncols];
                for y in r0..r1 {
                    let out = &mut dst[(y - r0) * w..(y - r0 + 1) * w];
                    let sy = y as isize + dy as isize - PAD as isize;
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::ZERO);
                        continue;
                    }
                    let line = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match dx {
                        0 => {
                            out[0] = T::ZERO;
                            out[1..].copy_from_slice(&line[..w - 1]);
                        }
                        1 => out.copy_from_slice(line),
                        _ => {
                            out[..w - 1].copy_from_slice(&line[1..]);
                            out[w - 1] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a lowered gradient back onto rows `r0..r1` of `dst`.
fn col2im_add<T: Real>(col: &[T], cin: usize, h: usize, w: usize, r0: usize, r1: usize, dst: &mut [T]) {
    let ncols = (r1 - r0) * w;
    for i in 0..cin {
        let plane = &mut dst[i * h * w..(i + 1) * h * w];
        for dy in 0..KERNEL {
            for dx in 0..KERNEL {
                let row = (i * TAPS + dy * KERNEL + dx) * ncols;
                let src = &col[row..row + ncols];
                for y in r0..r1 {
                    let sy = y as isize + dy as isize - PAD as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let g = &src[(y - r0) * w..(y - r0 + 1) * w];
                    let line = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match dx {
                        0 => {
                            for (l, &v) in line[..w - 1].iter_mut().zip(&g[1..]) {
                                *l += v;
                            }
                        }
                        1 => {
                            for (l, &v) in line.iter_mut().zip(g) {
                                *l += v;
                            }
                        }
                        _ => {
                            for (l, &v) in line[1..].iter_mut().zip(&g[..w - 1]) {
                                *l += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_input<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<()> {
    let d = input.dims();
    if d.c != params.in_channels() {
        return Err(shape_err!(
            "conv expects {} input channels, got {}",
            params.in_channels(),
            d.c
        ));
    }
    Ok(())
}

fn forward_sample<T: Real>(src: &[T], d: Dims, params: &ConvParams<T>, out: &mut [T]) {
    let (cin, h, w) = (d.c, d.h, d.w);
    let cout = params.out_channels();
    let k = cin * TAPS;
    let plane = h * w;
    if plane == 0 {
        return;
    }
    let rows = rows_per_chunk(k, h, w);
    let mut col = vec![T::ZERO; k * rows * w];
    let wptr = params.weights.data().as_ptr();
    for r0 in (0..h).step_by(rows) {
        let r1 = (r0 + rows).min(h);
        let ncols = (r1 - r0) * w;
        im2col(src, cin, h, w, r0, r1, &mut col[..k * ncols]);
        // SAFETY: weights are cout×k row-major, col is k×ncols row-major and
        // the output block is cout×ncols with row stride `plane`, all in bounds.
        unsafe {
            T::gemm(
                cout,
                k,
                ncols,
                T::ONE,
                wptr,
                k as isize,
                1,
                col.as_ptr(),
                ncols as isize,
                1,
                T::ZERO,
                out.as_mut_ptr().add(r0 * w),
                plane as isize,
                1,
            );
        }
    }
    for (o, &b) in params.bias.iter().enumerate() {
        for v in &mut out[o * plane..(o + 1) * plane] {
            *v += b;
        }
    }
}

pub fn conv2d_forward<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>) -> Result<Tensor4<T>> {
    check_input(input, params)?;
    let d = input.dims();
    let out_dims = Dims::new(d.n, params.out_channels(), d.h, d.w);
    let mut out = Tensor4::zeros(out_dims);
    let out_len = out_dims.sample_len();
    if out_len == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(s, dst)| forward_sample(input.sample(s), d, params, dst));
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub params: ConvParams<T>,
}

fn backward_sample<T: Real>(
    src: &[T],
    d: Dims,
    params: &ConvParams<T>,
    gout: &[T],
    gin: &mut [T],
) -> ConvParams<T> {
    let (cin, h, w) = (d.c, d.h, d.w);
    let cout = params.out_channels();
    let k = cin * TAPS;
    let plane = h * w;
    let mut grads = ConvParams::zeros(cin, cout);
    if plane == 0 {
        return grads;
    }
    let rows = rows_per_chunk(k, h, w);
    let mut col = vec![T::ZERO; k * rows * w];
    let mut gcol = vec![T::ZERO; k * rows * w];
    let wptr = params.weights.data().as_ptr();
    for r0 in (0..h).step_by(rows) {
        let r1 = (r0 + rows).min(h);
        let ncols = (r1 - r0) * w;
        im2col(src, cin, h, w, r0, r1, &mut col[..k * ncols]);
        // SAFETY: all matrices are within their buffers; gw, col and gcol are
        // distinct allocations from the read-only operands.
        unsafe {
            // dW += dY · colᵀ
            T::gemm(
                cout,
                ncols,
                k,
                T::ONE,
                gout.as_ptr().add(r0 * w),
                plane as isize,
                1,
                col.as_ptr(),
                1,
                ncols as isize,
                T::ONE,
                grads.weights.data_mut().as_mut_ptr(),
                k as isize,
                1,
            );
            // dcol = Wᵀ · dY
            T::gemm(
                k,
                cout,
                ncols,
                T::ONE,
                wptr,
                1,
                k as isize,
                gout.as_ptr().add(r0 * w),
                plane as isize,
                1,
                T::ZERO,
                gcol.as_mut_ptr(),
                ncols as isize,
                1,
            );
        }
        col2im_add(&gcol[..k * ncols], cin, h, w, r0, r1, gin);
    }
    for (o, b) in grads.bias.iter_mut().enumerate() {
        *b = gout[o * plane..(o + 1) * plane].iter().copied().sum();
    }
    grads
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    check_input(input, params)?;
    let d = input.dims();
    let expect = Dims::new(d.n, params.out_channels(), d.h, d.w);
    if grad_out.dims() != expect {
        return Err(shape_err!(
            "conv grad_out is {}, expected {}",
            grad_out.dims(),
            expect
        ));
    }
    let mut grad_input = Tensor4::zeros(d);
    let in_len = d.sample_len();
    let per_sample: Vec<ConvParams<T>> = if in_len == 0 {
        Vec::new()
    } else {
        grad_input
            .data_mut()
            .par_chunks_mut(in_len)
            .enumerate()
            .map(|(s, gin)| backward_sample(input.sample(s), d, params, grad_out.sample(s), gin))
            .collect()
    };
    let mut total = ConvParams::zeros(params.in_channels(), params.out_channels());
    for g in &per_sample {
        total.accumulate(g);
    }
    Ok(ConvGrads {
        input: grad_input,
        params: total,
    })
}
