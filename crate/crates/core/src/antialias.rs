//! Fixed binomial low-pass filtering for anti-aliased resampling.
//!
//! The blur is the separable 6-tap binomial `(1,5,10,10,5,1)/32` applied
//! depth-wise with reflection padding. Output sample `i` of a pass with
//! stride `s` reads input samples `s*i - 2 ..= s*i + 3`.

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const BINOMIAL_TAPS: [f64; 6] = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0];
pub const KERNEL_SIZE: usize = 6;
/// Leading offset of the window relative to `stride * i`.
pub const WINDOW_OFFSET: isize = -2;

/// The normalized 6x6 anti-aliasing kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    pub weights: [[f64; KERNEL_SIZE]; KERNEL_SIZE],
    /// Sum of the raw integer weights (`32 * 32`).
    pub normalization: f64,
}

pub fn binomial_kernel() -> BlurKernel {
    let normalization: f64 = BINOMIAL_TAPS.iter().sum::<f64>().powi(2);
    let mut weights = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
    for (r, row) in weights.iter_mut().enumerate() {
        for (c, w) in row.iter_mut().enumerate() {
            *w = BINOMIAL_TAPS[r] * BINOMIAL_TAPS[c] / normalization;
        }
    }
    BlurKernel {
        weights,
        normalization,
    }
}

impl BlurKernel {
    /// Kernel as a `1 x 1 x 6 x 6` tensor (stored in checkpoints).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 1, KERNEL_SIZE, KERNEL_SIZE), |_, _, r, c| {
            T::lit(self.weights[r][c])
        })
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn taps<T: Scalar>() -> [T; KERNEL_SIZE] {
    BINOMIAL_TAPS.map(|v| T::lit(v / 32.0))
}

// Source index table: `out_len x 6`.
fn source_indices(len: usize, stride: usize) -> Vec<usize> {
    let out = len / stride;
    let mut idx = Vec::with_capacity(out * KERNEL_SIZE);
    for i in 0..out {
        let base = (stride * i) as isize + WINDOW_OFFSET;
        for t in 0..KERNEL_SIZE {
            idx.push(reflect(base + t as isize, len));
        }
    }
    idx
}

/// Separable binomial blur of one `h x w` plane with the given stride.
pub(crate) fn blur_plane<T: Scalar>(src: &[T], h: usize, w: usize, stride: usize, dst: &mut [T]) {
    let k = taps::<T>();
    let (ho, wo) = (h / stride, w / stride);
    let cols = source_indices(w, stride);
    let rows = source_indices(h, stride);
    let mut tmp = vec![T::zero(); h * wo];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * wo..(y + 1) * wo];
        for (x, o) in out.iter_mut().enumerate() {
            let ix = &cols[x * KERNEL_SIZE..(x + 1) * KERNEL_SIZE];
            let mut acc = T::zero();
            for t in 0..KERNEL_SIZE {
                acc += k[t] * row[ix[t]];
            }
            *o = acc;
        }
    }
    for y in 0..ho {
        let iy = &rows[y * KERNEL_SIZE..(y + 1) * KERNEL_SIZE];
        let out = &mut dst[y * wo..(y + 1) * wo];
        out.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..KERNEL_SIZE {
            let src_row = &tmp[iy[t] * wo..(iy[t] + 1) * wo];
            for (o, &s) in out.iter_mut().zip(src_row) {
                *o += k[t] * s;
            }
        }
    }
}

/// Adjoint of [`blur_plane`]: accumulates into `dsrc` (`h x w`).
pub(crate) fn blur_plane_adjoint<T: Scalar>(
    dout: &[T],
    h: usize,
    w: usize,
    stride: usize,
    dsrc: &mut [T],
) {
    let k = taps::<T>();
    let (ho, wo) = (h / stride, w / stride);
    let cols = source_indices(w, stride);
    let rows = source_indices(h, stride);
    let mut tmp = vec![T::zero(); h * wo];
    for y in 0..ho {
        let iy = &rows[y * KERNEL_SIZE..(y + 1) * KERNEL_SIZE];
        let g = &dout[y * wo..(y + 1) * wo];
        for t in 0..KERNEL_SIZE {
            let dst_row = &mut tmp[iy[t] * wo..(iy[t] + 1) * wo];
            for (d, &gv) in dst_row.iter_mut().zip(g) {
                *d += k[t] * gv;
            }
        }
    }
    for y in 0..h {
        let g = &tmp[y * wo..(y + 1) * wo];
        let row = &mut dsrc[y * w..(y + 1) * w];
        for (x, &gv) in g.iter().enumerate() {
            let ix = &cols[x * KERNEL_SIZE..(x + 1) * KERNEL_SIZE];
            for t in 0..KERNEL_SIZE {
                row[ix[t]] += k[t] * gv;
            }
        }
    }
}

pub(crate) fn blur_tensor<T: Scalar>(x: &Tensor<T>, stride: usize) -> Tensor<T> {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, s.h / stride, s.w / stride);
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..s.c {
            blur_plane(x.plane(n, c), s.h, s.w, stride, out.plane_mut(n, c));
        }
    }
    out
}

pub(crate) fn blur_tensor_adjoint<T: Scalar>(gy: &Tensor<T>, in_shape: Shape, stride: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            blur_plane_adjoint(gy.plane(n, c), in_shape.h, in_shape.w, stride, dx.plane_mut(n, c));
        }
    }
    dx
}

/// Depth-wise binomial blur at stride 2; halves both spatial sides.
pub fn blur_downsample<T: Scalar>(features: &Tensor<T>) -> Result<Tensor<T>> {
    let s = features.shape();
    ensure(s.h >= 2 && s.w >= 2 && s.h % 2 == 0 && s.w % 2 == 0, || {
        Error::Shape(format!("blur_downsample needs even sides >= 2, got {}x{}", s.h, s.w))
    })?;
    ensure(s.c >= 1, || Error::Shape("blur_downsample needs at least one channel".into()))?;
    Ok(blur_tensor(features, 2))
}

/// Depth-wise binomial blur at stride 1 (size preserving).
pub fn blur_same<T: Scalar>(features: &Tensor<T>) -> Tensor<T> {
    blur_tensor(features, 1)
}

/// Replicates each sample into a `factor x factor` block. Only `factor = 2`
/// is supported.
pub fn nearest_upsample<T: Scalar>(features: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    ensure(factor == 2, || {
        Error::Argument(format!("nearest_upsample supports factor 2 only, got {factor}"))
    })?;
    Ok(upsample2(features))
}

pub(crate) fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (ho, wo) = (s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for xx in 0..s.w {
                    let v = src[y * s.w + xx];
                    let o = 2 * y * wo + 2 * xx;
                    dst[o] = v;
                    dst[o + 1] = v;
                    dst[o + wo] = v;
                    dst[o + wo + 1] = v;
                }
            }
        }
    }
    out
}

pub(crate) fn upsample2_adjoint<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let s = gy.shape();
    let (h, w) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = gy.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    let o = 2 * y * s.w + 2 * x;
                    dst[y * w + x] = src[o] + src[o + 1] + src[o + s.w] + src[o + s.w + 1];
                }
            }
        }
    }
    out
}

/// Plain stride-2 decimation (keeps even rows and columns), the aliasing
/// baseline the blur is compared against.
pub fn decimate<T: Scalar>(features: &Tensor<T>) -> Tensor<T> {
    let s = features.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.h / 2, s.w / 2), |n, c, y, x| {
        features.at(n, c, 2 * y, 2 * x)
    })
}
