//! Differentiable operations recorded on a [`Graph`].

use std::sync::Arc;

use crate::antialias;
use crate::nn::conv::{self, ConvGeom};
use crate::nn::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Spatial flip direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    /// Left-right mirror.
    Horizontal,
    /// Top-bottom mirror.
    Vertical,
}

pub(crate) fn flip_tensor<T: Scalar>(x: &Tensor<T>, axis: FlipAxis) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, y, xx| match axis {
        FlipAxis::Horizontal => x.at(n, c, y, s.w - 1 - xx),
        FlipAxis::Vertical => x.at(n, c, s.h - 1 - y, xx),
    })
}

/// Bilinear sampling taps with half-pixel centers: `(i0, i1, frac)`.
pub(crate) fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub(crate) fn resize_bilinear_tensor<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let s = x.shape();
    let ty = bilinear_taps(s.h, oh);
    let tx = bilinear_taps(s.w, ow);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    let top = src[y0 * s.w + x0] * (T::one() - fx) + src[y0 * s.w + x1] * fx;
                    let bot = src[y1 * s.w + x0] * (T::one() - fx) + src[y1 * s.w + x1] * fx;
                    dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
    }
    out
}

fn resize_bilinear_adjoint<T: Scalar>(gy: &Tensor<T>, in_shape: Shape) -> Tensor<T> {
    let gs = gy.shape();
    let ty = bilinear_taps(in_shape.h, gs.h);
    let tx = bilinear_taps(in_shape.w, gs.w);
    let mut dx = Tensor::zeros(in_shape);
    let w = in_shape.w;
    for n in 0..gs.n {
        for c in 0..gs.c {
            let g = gy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    let v = g[oy * gs.w + ox];
                    let top = v * (T::one() - fy);
                    let bot = v * fy;
                    dst[y0 * w + x0] += top * (T::one() - fx);
                    dst[y0 * w + x1] += top * fx;
                    dst[y1 * w + x0] += bot * (T::one() - fx);
                    dst[y1 * w + x1] += bot * fx;
                }
            }
        }
    }
    dx
}

fn unary<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var {
    let xv = g.value(x);
    let y = Arc::new(xv.map(f));
    let yc = Arc::clone(&y);
    let out = (*y).clone();
    g.record(out, &[x], move |gy, _| {
        // df(input, output) -> local derivative
        let d = Tensor::from_vec(
            gy.shape(),
            gy.data()
                .iter()
                .zip(xv.data())
                .zip(yc.data())
                .map(|((&gv, &xv), &yv)| gv * df(xv, yv))
                .collect(),
        )
        .unwrap();
        vec![Some(d)]
    })
}

impl<T: Scalar> Graph<T> {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        self.record(y, &[a, b], |gy, _| vec![Some(gy.clone()), Some(gy.clone())])
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        self.record(y, &[a, b], |gy, _| vec![Some(gy.clone()), Some(gy.scale(-T::one()))])
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let y = av.zip_map(&bv, |x, y| x * y);
        self.record(y, &[a, b], move |gy, need| {
            vec![
                need[0].then(|| gy.zip_map(&bv, |g, b| g * b)),
                need[1].then(|| gy.zip_map(&av, |g, a| g * a)),
            ]
        })
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: T, shift: T) -> Var {
        let y = self.value(x).map(|v| scale * v + shift);
        self.record(y, &[x], move |gy, _| vec![Some(gy.scale(scale))])
    }

    /// Adds a constant tensor (gradient passes to `x` unchanged).
    pub fn add_const(&self, x: Var, c: &Tensor<T>) -> Var {
        let y = self.value(x).zip_map(c, |a, b| a + b);
        self.record(y, &[x], |gy, _| vec![Some(gy.clone())])
    }

    /// Multiplies by a constant tensor of the same shape.
    pub fn mul_const(&self, x: Var, c: Tensor<T>) -> Var {
        let y = self.value(x).zip_map(&c, |a, b| a * b);
        self.record(y, &[x], move |gy, _| vec![Some(gy.zip_map(&c, |g, m| g * m))])
    }

    pub fn relu(&self, x: Var) -> Var {
        unary(self, x, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(&self, x: Var, slope: T) -> Var {
        unary(
            self,
            x,
            move |v| if v > T::zero() { v } else { v * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    pub fn tanh(&self, x: Var) -> Var {
        unary(self, x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        unary(self, x, |v| T::one() / (T::one() + (-v).exp()), |_, y| y * (T::one() - y))
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, x: Var, lo: T, hi: T) -> Var {
        unary(
            self,
            x,
            move |v| v.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    /// Forward value replaced by `value`; backward is the identity.
    pub fn straight_through(&self, x: Var, value: Tensor<T>) -> Var {
        assert_eq!(self.shape(x), value.shape(), "straight-through shape");
        self.record(value, &[x], |gy, _| vec![Some(gy.clone())])
    }

    pub fn flip(&self, x: Var, axis: FlipAxis) -> Var {
        let y = flip_tensor(&self.value(x), axis);
        self.record(y, &[x], move |gy, _| vec![Some(flip_tensor(gy, axis))])
    }

    pub fn resize_bilinear(&self, x: Var, oh: usize, ow: usize) -> Var {
        let s = self.shape(x);
        let y = resize_bilinear_tensor(&self.value(x), oh, ow);
        self.record(y, &[x], move |gy, _| vec![Some(resize_bilinear_adjoint(gy, s))])
    }

    pub fn concat_channels(&self, parts: &[Var]) -> Var {
        let values: Vec<Arc<Tensor<T>>> = parts.iter().map(|&p| self.value(p)).collect();
        let s0 = values[0].shape();
        let widths: Vec<usize> = values.iter().map(|v| v.shape().c).collect();
        for v in &values {
            let s = v.shape();
            assert_eq!((s.n, s.h, s.w), (s0.n, s0.h, s0.w), "concat_channels shape");
        }
        let total: usize = widths.iter().sum();
        let plane = s0.plane();
        let mut out = Tensor::zeros(Shape::new(s0.n, total, s0.h, s0.w));
        for n in 0..s0.n {
            let dst = out.sample_mut(n);
            let mut off = 0;
            for v in &values {
                let src = v.sample(n);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.record(out, parts, move |gy, need| {
            let mut grads = Vec::with_capacity(widths.len());
            let mut c0 = 0;
            for (i, &c) in widths.iter().enumerate() {
                if need[i] {
                    let mut g = Tensor::zeros(Shape::new(s0.n, c, s0.h, s0.w));
                    for n in 0..s0.n {
                        let src = &gy.sample(n)[c0 * plane..(c0 + c) * plane];
                        g.sample_mut(n).copy_from_slice(src);
                    }
                    grads.push(Some(g));
                } else {
                    grads.push(None);
                }
                c0 += c;
            }
            grads
        })
    }

    pub fn concat_batch(&self, parts: &[Var]) -> Var {
        let values: Vec<Arc<Tensor<T>>> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::cat_batch(&refs).expect("concat_batch shapes");
        let shapes: Vec<Shape> = values.iter().map(|v| v.shape()).collect();
        self.record(out, parts, move |gy, need| {
            let mut off = 0;
            shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let len = s.len();
                    let g = need[i].then(|| Tensor::from_vec(*s, gy.data()[off..off + len].to_vec()).unwrap());
                    off += len;
                    g
                })
                .collect()
        })
    }

    /// Samples `start .. start + len` of the batch.
    pub fn slice_batch(&self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        assert!(start + len <= s.n, "slice_batch out of range");
        let per = s.sample_len();
        let out = Tensor::from_vec(
            Shape::new(len, s.c, s.h, s.w),
            xv.data()[start * per..(start + len) * per].to_vec(),
        )
        .unwrap();
        self.record(out, &[x], move |gy, _| {
            let mut g = Tensor::zeros(s);
            g.data_mut()[start * per..(start + len) * per].copy_from_slice(gy.data());
            vec![Some(g)]
        })
    }

    pub fn mean(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        let inv = T::one() / T::from_usize_lossy(s.len());
        let y = Tensor::scalar(xv.sum() * inv);
        self.record(y, &[x], move |gy, _| vec![Some(Tensor::full(s, gy.data()[0] * inv))])
    }

    /// `sum_i w_i * x_i` of one-element nodes.
    pub fn weighted_sum(&self, terms: &[(T, Var)]) -> Var {
        let vars: Vec<Var> = terms.iter().map(|t| t.1).collect();
        let weights: Vec<T> = terms.iter().map(|t| t.0).collect();
        let total = terms
            .iter()
            .map(|&(w, v)| w * self.item(v))
            .fold(T::zero(), |a, b| a + b);
        self.record(Tensor::scalar(total), &vars, move |gy, _| {
            weights.iter().map(|&w| Some(Tensor::scalar(gy.data()[0] * w))).collect()
        })
    }

    /// Mean absolute difference; the subgradient at zero is zero.
    pub fn l1_loss(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "l1_loss shape");
        let s = av.shape();
        let inv = T::one() / T::from_usize_lossy(s.len());
        let total: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y).abs()).sum();
        self.record(Tensor::scalar(total * inv), &[a, b], move |gy, need| {
            let k = gy.data()[0] * inv;
            let sign = av.zip_map(&bv, |x, y| {
                let d = x - y;
                if d > T::zero() {
                    k
                } else if d < T::zero() {
                    -k
                } else {
                    T::zero()
                }
            });
            vec![need[0].then(|| sign.clone()), need[1].then(|| sign.scale(-T::one()))]
        })
    }

    /// Mean of `sqrt(d^2 + eps^2)`, a smooth stand-in for L1.
    pub fn smooth_l1_loss(&self, a: Var, b: Var, eps: T) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let s = av.shape();
        let inv = T::one() / T::from_usize_lossy(s.len());
        let e2 = eps * eps;
        let total: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| ((x - y) * (x - y) + e2).sqrt())
            .sum();
        self.record(Tensor::scalar(total * inv), &[a, b], move |gy, need| {
            let k = gy.data()[0] * inv;
            let d = av.zip_map(&bv, |x, y| {
                let d = x - y;
                k * d / (d * d + e2).sqrt()
            });
            vec![need[0].then(|| d.clone()), need[1].then(|| d.scale(-T::one()))]
        })
    }

    pub fn mse_loss(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mse_loss shape");
        let inv = T::one() / T::from_usize_lossy(av.len());
        let total: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        self.record(Tensor::scalar(total * inv), &[a, b], move |gy, need| {
            let k = gy.data()[0] * inv * T::lit(2.0);
            let d = av.zip_map(&bv, |x, y| k * (x - y));
            vec![need[0].then(|| d.clone()), need[1].then(|| d.scale(-T::one()))]
        })
    }

    /// Mean of `ln(clamp(x))` (or of `ln(1 - clamp(x))` when `complement`).
    /// The clamp bounds are `[eps, 1 - eps]`; gradient is zero where clamped.
    pub fn mean_log(&self, x: Var, eps: T, complement: bool) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        let inv = T::one() / T::from_usize_lossy(s.len());
        let (lo, hi) = (eps, T::one() - eps);
        let total: T = xv
            .data()
            .iter()
            .map(|&p| {
                let p = p.max(lo).min(hi);
                if complement {
                    (T::one() - p).ln()
                } else {
                    p.ln()
                }
            })
            .sum();
        self.record(Tensor::scalar(total * inv), &[x], move |gy, _| {
            let k = gy.data()[0] * inv;
            let d = xv.map(|p| {
                if p < lo || p > hi {
                    T::zero()
                } else if complement {
                    -k / (T::one() - p)
                } else {
                    k / p
                }
            });
            vec![Some(d)]
        })
    }

    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = bias.map(|b| self.value(b));
        let y = conv::conv2d_forward(&xv, &wv, bv.as_deref(), &geom);
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.record(y, &parents, move |gy, need| {
            let nb = has_bias && need[2];
            let g = conv::conv2d_backward(&xv, &wv, gy, &geom, [need[0], need[1], nb]);
            let mut out = vec![g.input, g.weight];
            if has_bias {
                out.push(g.bias);
            }
            out
        })
    }

    pub fn conv_transpose2d(&self, x: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = bias.map(|b| self.value(b));
        let y = conv::conv_transpose2d_forward(&xv, &wv, bv.as_deref(), &geom);
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.record(y, &parents, move |gy, need| {
            let nb = has_bias && need[2];
            let g = conv::conv_transpose2d_backward(&xv, &wv, gy, &geom, [need[0], need[1], nb]);
            let mut out = vec![g.input, g.weight];
            if has_bias {
                out.push(g.bias);
            }
            out
        })
    }

    /// Depth-wise fixed binomial blur; `stride` 2 halves the sides.
    pub fn blur(&self, x: Var, stride: usize) -> Var {
        let s = self.shape(x);
        assert!(stride == 1 || (s.h % 2 == 0 && s.w % 2 == 0), "blur stride 2 needs even sides");
        let y = antialias::blur_tensor(&self.value(x), stride);
        self.record(y, &[x], move |gy, _| vec![Some(antialias::blur_tensor_adjoint(gy, s, stride))])
    }

    pub fn upsample_nearest2(&self, x: Var) -> Var {
        let y = antialias::upsample2(&self.value(x));
        self.record(y, &[x], |gy, _| vec![Some(antialias::upsample2_adjoint(gy))])
    }

    /// 2x2 max pooling with stride 2 (feature extractor only).
    pub fn max_pool2(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        let (ho, wo) = (s.h / 2, s.w / 2);
        let out_shape = Shape::new(s.n, s.c, ho, wo);
        let mut y = Tensor::zeros(out_shape);
        let mut arg = vec![0usize; out_shape.len()];
        let mut k = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let src = xv.plane(n, c);
                let base = (n * s.c + c) * s.plane();
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = 2 * oy * s.w + 2 * ox;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let i = (2 * oy + dy) * s.w + 2 * ox + dx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                        y.data_mut()[k] = src[best];
                        arg[k] = base + best;
                        k += 1;
                    }
                }
            }
        }
        self.record(y, &[x], move |gy, _| {
            let mut g = Tensor::zeros(s);
            for (i, &a) in arg.iter().enumerate() {
                g.data_mut()[a] += gy.data()[i];
            }
            vec![Some(g)]
        })
    }

    /// Batch normalization with batch statistics. Returns the output and the
    /// per-channel mean and biased variance that were used.
    pub fn batch_norm_train(&self, x: Var, gamma: Var, beta: Var, eps: T) -> (Var, Vec<T>, Vec<T>) {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let s = xv.shape();
        let count = s.n * s.plane();
        let inv_count = T::one() / T::from_usize_lossy(count);
        let mut means = vec![T::zero(); s.c];
        let mut vars = vec![T::zero(); s.c];
        for c in 0..s.c {
            let mut acc = T::zero();
            for n in 0..s.n {
                acc += xv.plane(n, c).iter().copied().sum::<T>();
            }
            let m = acc * inv_count;
            let mut sq = T::zero();
            for n in 0..s.n {
                sq += xv.plane(n, c).iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
            means[c] = m;
            vars[c] = sq * inv_count;
        }
        let inv_std: Vec<T> = vars.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(s);
        let mut y = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let (m, is, gm, bt) = (means[c], inv_std[c], gv.data()[c], bv.data()[c]);
                let src = xv.plane(n, c);
                let xh = xhat.plane_mut(n, c);
                for (o, &v) in xh.iter_mut().zip(src) {
                    *o = (v - m) * is;
                }
                let xh = xhat.plane(n, c).to_vec();
                for (o, v) in y.plane_mut(n, c).iter_mut().zip(xh) {
                    *o = gm * v + bt;
                }
            }
        }
        let out = self.record(y, &[x, gamma, beta], move |gy, need| {
            let mut dgamma = Tensor::zeros(Shape::new(1, s.c, 1, 1));
            let mut dbeta = Tensor::zeros(Shape::new(1, s.c, 1, 1));
            for c in 0..s.c {
                let (mut sg, mut sgx) = (T::zero(), T::zero());
                for n in 0..s.n {
                    for (&g, &xh) in gy.plane(n, c).iter().zip(xhat.plane(n, c)) {
                        sg += g;
                        sgx += g * xh;
                    }
                }
                dbeta.data_mut()[c] = sg;
                dgamma.data_mut()[c] = sgx;
            }
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(s);
                for c in 0..s.c {
                    let k = gv.data()[c] * inv_std[c];
                    let mg = dbeta.data()[c] * inv_count;
                    let mgx = dgamma.data()[c] * inv_count;
                    for n in 0..s.n {
                        let g = gy.plane(n, c);
                        let xh = xhat.plane(n, c);
                        for ((o, &gv), &xv) in dx.plane_mut(n, c).iter_mut().zip(g).zip(xh) {
                            *o = k * (gv - mg - xv * mgx);
                        }
                    }
                }
                dx
            });
            vec![dx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
        });
        (out, means, vars)
    }

    /// Per-channel `scale * x + shift` with parameter tensors of shape
    /// `1 x c x 1 x 1` (used for inference-mode normalization).
    pub fn channel_affine(&self, x: Var, scale: &[T], shift: &[T]) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        let mut y = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let (k, b) = (scale[c], shift[c]);
                for (o, &v) in y.plane_mut(n, c).iter_mut().zip(xv.plane(n, c)) {
                    *o = k * v + b;
                }
            }
        }
        let scale = scale.to_vec();
        self.record(y, &[x], move |gy, _| {
            let mut g = Tensor::zeros(s);
            for n in 0..s.n {
                for c in 0..s.c {
                    for (o, &v) in g.plane_mut(n, c).iter_mut().zip(gy.plane(n, c)) {
                        *o = scale[c] * v;
                    }
                }
            }
            vec![Some(g)]
        })
    }

    /// Inference-mode normalization that still propagates to `gamma`/`beta`.
    pub fn batch_norm_eval(&self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Var {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let s = xv.shape();
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let mut y = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let k = gv.data()[c] * inv_std[c];
                let b = bv.data()[c] - k * mean[c];
                for (o, &v) in y.plane_mut(n, c).iter_mut().zip(xv.plane(n, c)) {
                    *o = k * v + b;
                }
            }
        }
        self.record(y, &[x, gamma, beta], move |gy, need| {
            let mut dx = need[0].then(|| Tensor::zeros(s));
            let mut dgamma = Tensor::zeros(Shape::new(1, s.c, 1, 1));
            let mut dbeta = Tensor::zeros(Shape::new(1, s.c, 1, 1));
            for c in 0..s.c {
                let k = gv.data()[c] * inv_std[c];
                for n in 0..s.n {
                    let g = gy.plane(n, c);
                    let xp = xv.plane(n, c);
                    for (&gvv, &xx) in g.iter().zip(xp) {
                        dbeta.data_mut()[c] += gvv;
                        dgamma.data_mut()[c] += gvv * (xx - mean[c]) * inv_std[c];
                    }
                    if let Some(dx) = dx.as_mut() {
                        for (o, &gvv) in dx.plane_mut(n, c).iter_mut().zip(g) {
                            *o = k * gvv;
                        }
                    }
                }
            }
            vec![dx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(sum(w * f(x)))/dx for a unary graph op.
    fn check_input_grad(
        shape: Shape,
        seed: u64,
        build: impl Fn(&Graph<f64>, Var) -> Var,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Tensor::<f64>::randn(shape, 1.0, &mut rng);
        let probe = {
            let g = Graph::new();
            let x = g.constant(x0.clone());
            let y = build(&g, x);
            Tensor::<f64>::randn(g.shape(y), 1.0, &mut rng)
        };
        let objective = |x: &Tensor<f64>| {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            let y = build(&g, xv);
            g.value(y).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let g = Graph::new();
        let x = g.leaf(Arc::new(x0.clone()), true);
        let y = build(&g, x);
        let p = g.constant(probe.clone());
        let prod = g.mul(y, p);
        let s = g.mean(prod);
        let scale = g.shape(y).len() as f64;
        let grads = g.backward(s);
        let analytic = grads.get(x).unwrap().scale(scale);
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut plus = x0.clone();
            plus.data_mut()[i] += h;
            let mut minus = x0.clone();
            minus.data_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() < 1e-5 * (1.0 + fd.abs()), "elem {i}: fd {fd} vs analytic {a}");
        }
    }

    #[test]
    fn gradients_of_spatial_ops() {
        let s = Shape::new(2, 2, 6, 4);
        check_input_grad(s, 1, |g, x| g.blur(x, 2));
        check_input_grad(s, 2, |g, x| g.blur(x, 1));
        check_input_grad(s, 3, |g, x| g.upsample_nearest2(x));
        check_input_grad(s, 4, |g, x| g.resize_bilinear(x, 9, 3));
        check_input_grad(s, 5, |g, x| g.flip(x, FlipAxis::Horizontal));
        check_input_grad(s, 6, |g, x| g.flip(x, FlipAxis::Vertical));
        check_input_grad(s, 7, |g, x| g.max_pool2(x));
        check_input_grad(s, 8, |g, x| g.slice_batch(x, 1, 1));
        check_input_grad(s, 9, |g, x| {
            let a = g.tanh(x);
            let b = g.sigmoid(x);
            g.concat_channels(&[a, b])
        });
    }

    #[test]
    fn gradients_of_conv_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = Tensor::<f64>::randn(Shape::new(3, 2, 4, 4), 0.5, &mut rng);
        let wt = Tensor::<f64>::randn(Shape::new(2, 3, 4, 4), 0.5, &mut rng);
        let s = Shape::new(2, 2, 6, 6);
        let w1 = w.clone();
        check_input_grad(s, 11, move |g, x| {
            let wv = g.constant(w1.clone());
            g.conv2d(x, wv, None, ConvGeom::square(4, 2, 1))
        });
        let w2 = w.clone();
        check_input_grad(s, 12, move |g, x| {
            let wv = g.constant(w2.clone());
            g.conv2d(x, wv, None, ConvGeom::same(4))
        });
        check_input_grad(s, 13, move |g, x| {
            let wv = g.constant(wt.clone());
            g.conv_transpose2d(x, wv, None, ConvGeom::square(4, 2, 1))
        });
        // Weight gradient: treat the weight as the input.
        let x0 = Tensor::<f64>::randn(s, 1.0, &mut rng);
        check_input_grad(Shape::new(3, 2, 4, 4), 14, move |g, w| {
            let xv = g.constant(x0.clone());
            g.conv2d(xv, w, None, ConvGeom::same(4))
        });
    }

    #[test]
    fn gradients_of_batch_norm() {
        let gamma = Tensor::<f64>::from_vec(Shape::new(1, 3, 1, 1), vec![1.5, 0.5, -1.0]).unwrap();
        let beta = Tensor::<f64>::from_vec(Shape::new(1, 3, 1, 1), vec![0.1, 0.0, 0.3]).unwrap();
        check_input_grad(Shape::new(2, 3, 3, 2), 20, move |g, x| {
            let gm = g.constant(gamma.clone());
            let bt = g.constant(beta.clone());
            g.batch_norm_train(x, gm, bt, 1e-5).0
        });
    }

    #[test]
    fn l1_subgradient_is_zero_at_zero() {
        let g = Graph::<f64>::new();
        let a = g.leaf(Arc::new(Tensor::full(Shape::new(1, 1, 1, 2), 0.5)), true);
        let b = g.constant(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.5, 0.0]).unwrap());
        let l = g.l1_loss(a, b);
        assert_eq!(g.item(l), 0.25);
        let grads = g.backward(l);
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn bilinear_identity_at_same_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 5, 7), 1.0, &mut rng);
        assert!(resize_bilinear_tensor(&x, 5, 7).max_abs_diff(&x) < 1e-15);
    }
}
