//! SSIM, MS-SSIM and pixel-domain multi-scale VIF.

use crate::error::{ensure, Error, Result};
use crate::image_array::ImageArray;
use crate::scalar::Scalar;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// VIF noise variance on the 0..255 scale.
const VIF_SIGMA_NSQ: f64 = 2.0;
const VIF_EPS: f64 = 1e-10;

/// Normalized 1-D Gaussian taps.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// A plane of f64 values.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable "valid" correlation with `taps` on both axes.
    fn filter_valid(&self, taps: &[f64]) -> Plane {
        let k = taps.len();
        let (oh, ow) = (self.h + 1 - k, self.w + 1 - k);
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let src = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { h: oh, w: ow, v: out }
    }

    /// 2x2 average pooling (odd trailing row/column dropped).
    fn halve(&self) -> Plane {
        let (oh, ow) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * self.w + 2 * x;
                v.push(0.25 * (self.v[i] + self.v[i + 1] + self.v[i + self.w] + self.v[i + self.w + 1]));
            }
        }
        Plane { h: oh, w: ow, v }
    }

    fn decimate2(&self) -> Plane {
        let (oh, ow) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut v = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                v.push(self.v[2 * y * self.w + 2 * x]);
            }
        }
        Plane { h: oh, w: ow, v }
    }
}

fn planes<T: Scalar>(img: &ImageArray<T>, scale: f64) -> Vec<Plane> {
    let (c, h, w) = img.dims();
    (0..c)
        .map(|ch| Plane {
            h,
            w,
            v: img.channel(ch).iter().map(|v| v.as_f64() * scale).collect(),
        })
        .collect()
}

fn check_pair<T: Scalar>(a: &ImageArray<T>, b: &ImageArray<T>) -> Result<()> {
    ensure(a.same_dims(b), || {
        Error::Shape(format!("image dimensions differ: {:?} vs {:?}", a.dims(), b.dims()))
    })
}

/// Window side: 11, or the largest odd size that fits a smaller plane.
fn window_for(h: usize, w: usize) -> usize {
    let m = h.min(w).min(SSIM_WINDOW);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_plane(a: &Plane, b: &Plane) -> (f64, f64) {
    let taps = gaussian_taps(window_for(a.h, a.w), SSIM_SIGMA);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mu_a = a.filter_valid(&taps);
    let mu_b = b.filter_valid(&taps);
    let aa = a.map2(a, |x, y| x * y).filter_valid(&taps);
    let bb = b.map2(b, |x, y| x * y).filter_valid(&taps);
    let ab = a.map2(b, |x, y| x * y).filter_valid(&taps);
    let n = mu_a.v.len();
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..n {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = aa.v[i] - ma * ma;
        let vb = bb.v[i] - mb * mb;
        let cov = ab.v[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        s_sum += l * cs;
        cs_sum += cs;
    }
    (s_sum / n as f64, cs_sum / n as f64)
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, peak 1),
/// averaged over channels.
pub fn ssim<T: Scalar>(a: &ImageArray<T>, b: &ImageArray<T>) -> Result<f64> {
    check_pair(a, b)?;
    let (pa, pb) = (planes(a, 1.0), planes(b, 1.0));
    Ok(pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y).0).sum::<f64>() / pa.len() as f64)
}

/// Five-scale MS-SSIM with 2x2 average-pool down-sampling, averaged over
/// channels. Negative per-scale terms are clipped to zero.
pub fn ms_ssim<T: Scalar>(a: &ImageArray<T>, b: &ImageArray<T>) -> Result<f64> {
    check_pair(a, b)?;
    let (_, h, w) = a.dims();
    ensure(h.min(w) >= 16, || Error::Shape(format!("MS-SSIM needs sides of at least 16, got {h}x{w}")))?;
    let mut total = 0.0;
    let (pa, pb) = (planes(a, 1.0), planes(b, 1.0));
    for (x, y) in pa.iter().zip(&pb) {
        let (mut x, mut y) = (x.clone(), y.clone());
        let mut value = 1.0;
        for (j, &wj) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (s, cs) = ssim_plane(&x, &y);
            let term = if j + 1 == MS_SSIM_WEIGHTS.len() { s } else { cs };
            value *= term.max(0.0).powf(wj);
            if j + 1 < MS_SSIM_WEIGHTS.len() {
                x = x.halve();
                y = y.halve();
            }
        }
        total += value;
    }
    Ok(total / pa.len() as f64)
}

fn vif_plane(reference: &Plane, distorted: &Plane) -> Result<(f64, f64)> {
    let (mut num, mut den) = (0.0, 0.0);
    let (mut r, mut d) = (reference.clone(), distorted.clone());
    for scale in 1..=4u32 {
        let n = (1usize << (4 - scale + 1)) + 1;
        let taps = gaussian_taps(n, n as f64 / 5.0);
        if scale > 1 {
            ensure(r.h >= n && r.w >= n, || Error::Shape("image too small for VIF".into()))?;
            r = r.filter_valid(&taps).decimate2();
            d = d.filter_valid(&taps).decimate2();
        }
        ensure(r.h >= n && r.w >= n, || Error::Shape("image too small for VIF".into()))?;
        let mu1 = r.filter_valid(&taps);
        let mu2 = d.filter_valid(&taps);
        let s11 = r.map2(&r, |a, b| a * b).filter_valid(&taps);
        let s22 = d.map2(&d, |a, b| a * b).filter_valid(&taps);
        let s12 = r.map2(&d, |a, b| a * b).filter_valid(&taps);
        for i in 0..mu1.v.len() {
            let (m1, m2) = (mu1.v[i], mu2.v[i]);
            let mut sigma1_sq = (s11.v[i] - m1 * m1).max(0.0);
            let sigma2_sq = (s22.v[i] - m2 * m2).max(0.0);
            let sigma12 = s12.v[i] - m1 * m2;
            let mut g = sigma12 / (sigma1_sq + VIF_EPS);
            let mut sv_sq = sigma2_sq - g * sigma12;
            if sigma1_sq < VIF_EPS {
                g = 0.0;
                sv_sq = sigma2_sq;
                sigma1_sq = 0.0;
            }
            if sigma2_sq < VIF_EPS {
                g = 0.0;
                sv_sq = 0.0;
            }
            if g < 0.0 {
                sv_sq = sigma2_sq;
                g = 0.0;
            }
            if sv_sq <= VIF_EPS {
                sv_sq = VIF_EPS;
            }
            num += (1.0 + g * g * sigma1_sq / (sv_sq + VIF_SIGMA_NSQ)).log10();
            den += (1.0 + sigma1_sq / VIF_SIGMA_NSQ).log10();
        }
    }
    Ok((num, den))
}

/// Pixel-domain VIF over four Gaussian scales, on the 0..255 scale.
/// `a` is the reference, `b` the distorted image. A featureless reference
/// (zero information) scores 1.
pub fn vif<T: Scalar>(a: &ImageArray<T>, b: &ImageArray<T>) -> Result<f64> {
    check_pair(a, b)?;
    let (pa, pb) = (planes(a, 255.0), planes(b, 255.0));
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        let (num, den) = vif_plane(x, y)?;
        total += if den == 0.0 { 1.0 } else { num / den };
    }
    Ok(total / pa.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(side: usize, seed: u64) -> ImageArray<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let phases: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 6.0).collect();
        ImageArray::from_fn(3, side, side, |c, y, x| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.2 * (0.3 * x + phases[c]).sin() * (0.17 * y + phases[c + 3]).cos() + 0.1 * (0.9 * (x + y)).sin()
        })
    }

    #[test]
    fn identity_scores_one() {
        let a = texture(64, 1);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
        assert!((vif(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_extremes() {
        let a = ImageArray::<f64>::filled(1, 32, 32, 0.0);
        let b = ImageArray::<f64>::filled(1, 32, 32, 1.0);
        // (C1 / (1 + C1)) * 1
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.01 && (s - 1e-4 / (1.0 + 1e-4)).abs() < 1e-12, "{s}");
    }

    #[test]
    fn taps_normalized() {
        for n in [3, 5, 9, 11, 17] {
            let t = gaussian_taps(n, 1.5);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn small_images() {
        let a = texture(8, 2);
        assert!(ssim(&a, &a.map(|v| v * 0.9)).unwrap() < 1.0);
        assert!(ms_ssim(&a, &a).is_err());
        assert!(vif(&a, &a).is_err());
    }
}
