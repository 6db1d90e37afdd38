//! im2col convolution kernels (forward and adjoints).

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Kernel size, stride and (possibly asymmetric) zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            kh: k,
            kw: k,
            stride,
            pad_top: pad,
            pad_left: pad,
            pad_bottom: pad,
            pad_right: pad,
        }
    }

    /// Stride-1 "same" geometry; even kernels pad one less before than after.
    pub fn same(k: usize) -> Self {
        let before = (k - 1) / 2;
        let after = k - 1 - before;
        ConvGeom {
            kh: k,
            kw: k,
            stride: 1,
            pad_top: before,
            pad_left: before,
            pad_bottom: after,
            pad_right: after,
        }
    }

    /// Output side of a forward convolution, `None` when the kernel does
    /// not fit.
    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + self.pad_top + self.pad_bottom;
        let pw = w + self.pad_left + self.pad_right;
        if ph < self.kh || pw < self.kw || self.stride == 0 {
            return None;
        }
        Some(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }

    /// Output side of a transposed convolution.
    pub fn transpose_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let full_h = (h.checked_sub(1)?) * self.stride + self.kh;
        let full_w = (w.checked_sub(1)?) * self.stride + self.kw;
        Some((
            full_h.checked_sub(self.pad_top + self.pad_bottom)?,
            full_w.checked_sub(self.pad_left + self.pad_right)?,
        ))
    }
}

// Valid `o` range with `0 <= o*stride + k - pad < len`.
#[inline]
fn valid_range(out_len: usize, len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let k = k as isize;
    let pad = pad as isize;
    let s = stride as isize;
    let lo_num = pad - k;
    let lo = if lo_num <= 0 { 0 } else { (lo_num + s - 1) / s };
    let hi_num = len as isize - 1 + pad - k;
    let hi = if hi_num < 0 { -1 } else { hi_num / s };
    let hi = hi.min(out_len as isize - 1);
    if hi < lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize + 1)
    }
}

/// Unfolds a `c x h x w` sample into `(c*kh*kw) x (ho*wo)` columns.
pub(crate) fn im2col<T: Scalar>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let p = ho * wo;
    debug_assert_eq!(col.len(), c * g.kh * g.kw * p);
    let mut row = 0;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ki in 0..g.kh {
            let (y0, y1) = valid_range(ho, h, g.stride, ki, g.pad_top);
            for kj in 0..g.kw {
                let (x0, x1) = valid_range(wo, w, g.stride, kj, g.pad_left);
                let dst = &mut col[row * p..(row + 1) * p];
                dst.iter_mut().for_each(|v| *v = T::zero());
                for oy in y0..y1 {
                    let iy = oy * g.stride + ki - g.pad_top;
                    let src_row = &plane[iy * w..(iy + 1) * w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if x1 <= x0 {
                        continue;
                    }
                    if g.stride == 1 {
                        let ix0 = x0 + kj - g.pad_left;
                        drow[x0..x1].copy_from_slice(&src_row[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for ox in x0..x1 {
                            drow[ox] = src_row[ox * g.stride + kj - g.pad_left];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a sample.
pub(crate) fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    ho: usize,
    wo: usize,
    dst: &mut [T],
) {
    let p = ho * wo;
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ki in 0..g.kh {
            let (y0, y1) = valid_range(ho, h, g.stride, ki, g.pad_top);
            for kj in 0..g.kw {
                let (x0, x1) = valid_range(wo, w, g.stride, kj, g.pad_left);
                let src = &col[row * p..(row + 1) * p];
                for oy in y0..y1 {
                    let iy = oy * g.stride + ki - g.pad_top;
                    let prow = &mut plane[iy * w..(iy + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    if x1 <= x0 {
                        continue;
                    }
                    if g.stride == 1 {
                        let ix0 = x0 + kj - g.pad_left;
                        for (d, &s) in prow[ix0..ix0 + (x1 - x0)].iter_mut().zip(&srow[x0..x1]) {
                            *d += s;
                        }
                    } else {
                        for ox in x0..x1 {
                            prow[ox * g.stride + kj - g.pad_left] += srow[ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `y = W * x (+ b)` with `W: cout x cin x kh x kw`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let xs = x.shape();
    let ws = weight.shape();
    assert_eq!(ws.c, xs.c, "conv2d: input channels {} vs weight {}", xs.c, ws.c);
    assert_eq!((ws.h, ws.w), (g.kh, g.kw), "conv2d: kernel shape");
    let (ho, wo) = g.conv_out(xs.h, xs.w).expect("conv2d: kernel larger than padded input");
    let cout = ws.n;
    let k = xs.c * g.kh * g.kw;
    let p = ho * wo;
    let mut out = Tensor::zeros(Shape::new(xs.n, cout, ho, wo));
    let mut col = vec![T::zero(); k * p];
    for n in 0..xs.n {
        im2col(x.sample(n), xs.c, xs.h, xs.w, g, ho, wo, &mut col);
        let dst = out.sample_mut(n);
        let beta = match bias {
            Some(b) => {
                for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = b.data()[oc]);
                }
                T::one()
            }
            None => T::zero(),
        };
        T::gemm(
            cout, k, p, T::one(), weight.data(), k as isize, 1, &col, p as isize, 1, beta, dst,
            p as isize, 1,
        );
    }
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &Tensor<T>,
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads<T> {
    let xs = x.shape();
    let ws = weight.shape();
    let ys = gy.shape();
    let (cout, k, p) = (ws.n, xs.c * g.kh * g.kw, ys.h * ys.w);
    let mut col = vec![T::zero(); k * p];
    let mut dx = need[0].then(|| Tensor::zeros(xs));
    let mut dw = need[1].then(|| Tensor::zeros(ws));
    let mut db = need[2].then(|| Tensor::zeros(Shape::new(1, cout, 1, 1)));
    for n in 0..xs.n {
        let gys = gy.sample(n);
        if let Some(dw) = dw.as_mut() {
            im2col(x.sample(n), xs.c, xs.h, xs.w, g, ys.h, ys.w, &mut col);
            // dW += dY * col^T
            T::gemm(
                cout, p, k, T::one(), gys, p as isize, 1, &col, 1, p as isize, T::one(),
                dw.data_mut(), k as isize, 1,
            );
        }
        if let Some(db) = db.as_mut() {
            for (oc, chunk) in gys.chunks(p).enumerate() {
                db.data_mut()[oc] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcol = W^T * dY
            T::gemm(
                k, cout, p, T::one(), weight.data(), 1, k as isize, gys, p as isize, 1, T::zero(),
                &mut col, p as isize, 1,
            );
            col2im(&col, xs.c, xs.h, xs.w, g, ys.h, ys.w, dx.sample_mut(n));
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Transposed convolution with `W: cin x cout x kh x kw` (the adjoint of
/// [`conv2d_forward`] mapping the output space back to the input space).
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let xs = x.shape();
    let ws = weight.shape();
    assert_eq!(ws.n, xs.c, "conv_transpose2d: input channels");
    let cout = ws.c;
    let (ho, wo) = g.transpose_out(xs.h, xs.w).expect("conv_transpose2d: degenerate geometry");
    let k = cout * g.kh * g.kw;
    let p = xs.h * xs.w;
    let mut out = Tensor::zeros(Shape::new(xs.n, cout, ho, wo));
    let mut col = vec![T::zero(); k * p];
    for n in 0..xs.n {
        // col = W^T * x, with W viewed as cin x (cout*kh*kw)
        T::gemm(
            k, xs.c, p, T::one(), weight.data(), 1, k as isize, x.sample(n), p as isize, 1,
            T::zero(), &mut col, p as isize, 1,
        );
        let dst = out.sample_mut(n);
        col2im(&col, cout, ho, wo, g, xs.h, xs.w, dst);
        if let Some(b) = bias {
            for (oc, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                let bv = b.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &Tensor<T>,
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads<T> {
    let xs = x.shape();
    let ws = weight.shape();
    let ys = gy.shape();
    let cout = ws.c;
    let k = cout * g.kh * g.kw;
    let p = xs.h * xs.w;
    let mut col = vec![T::zero(); k * p];
    let mut dx = need[0].then(|| Tensor::zeros(xs));
    let mut dw = need[1].then(|| Tensor::zeros(ws));
    let mut db = need[2].then(|| Tensor::zeros(Shape::new(1, cout, 1, 1)));
    for n in 0..xs.n {
        let gys = gy.sample(n);
        if dx.is_some() || dw.is_some() {
            im2col(gys, cout, ys.h, ys.w, g, xs.h, xs.w, &mut col);
        }
        if let Some(dx) = dx.as_mut() {
            // dx = W * col
            T::gemm(
                xs.c, k, p, T::one(), weight.data(), k as isize, 1, &col, p as isize, 1, T::zero(),
                dx.sample_mut(n), p as isize, 1,
            );
        }
        if let Some(dw) = dw.as_mut() {
            // dW += x * col^T
            T::gemm(
                xs.c, p, k, T::one(), x.sample(n), p as isize, 1, &col, 1, p as isize, T::one(),
                dw.data_mut(), k as isize, 1,
            );
        }
        if let Some(db) = db.as_mut() {
            for (oc, chunk) in gys.chunks(ys.h * ys.w).enumerate() {
                db.data_mut()[oc] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
