//! Test-side reference implementations. Written independently of the
//! library: direct summations and plain loops, no shared helpers.
#![allow(dead_code)]

use aawm::ImageArray;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n * n).map(|_| r.random::<f64>()).collect()
}

pub fn random_image(c: usize, side: usize, seed: u64) -> ImageArray<f64> {
    let mut r = rng(seed);
    ImageArray::from_fn(c, side, side, |_, _, _| r.random::<f64>())
}

/// Smooth test texture with some structure at every scale.
pub fn texture(side: usize, seed: u64) -> ImageArray<f64> {
    let mut r = rng(seed);
    let f: Vec<f64> = (0..12).map(|_| r.random::<f64>()).collect();
    ImageArray::from_fn(3, side, side, |c, y, x| {
        let (x, y) = (x as f64, y as f64);
        let a = (0.11 + 0.3 * f[c]) * x + 6.0 * f[c + 3];
        let b = (0.07 + 0.2 * f[c + 6]) * y + 6.0 * f[c + 9];
        (0.5 + 0.25 * a.sin() * b.cos() + 0.15 * (0.5 * (x - y) + f[c]).sin()).clamp(0.0, 1.0)
    })
}

/// `X[k][l] = c(k) c(l) sum_p sum_q x[p][q] cos(pi (2p+1) k / 2n) cos(pi (2q+1) l / 2n)`.
pub fn dct_direct(x: &[f64], n: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let norm = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            let mut acc = 0.0;
            for p in 0..n {
                for q in 0..n {
                    acc += x[p * n + q]
                        * (pi * (2 * p + 1) as f64 * k as f64 / (2 * n) as f64).cos()
                        * (pi * (2 * q + 1) as f64 * l as f64 / (2 * n) as f64).cos();
                }
            }
            out[k * n + l] = norm(k) * norm(l) * acc;
        }
    }
    out
}

fn binom5(k: usize) -> f64 {
    [1.0, 5.0, 10.0, 10.0, 5.0, 1.0][k]
}

/// Mirror without edge repeat: -1 -> 1, n -> n-2.
fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// 6x6 binomial blur of one plane, window `stride*i - 2 ..= stride*i + 3`.
pub fn blur_plane_naive(x: &[f64], h: usize, w: usize, stride: usize) -> Vec<f64> {
    let (oh, ow) = (h / stride, w / stride);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for a in 0..6 {
                for b in 0..6 {
                    let y = mirror((stride * i) as isize - 2 + a as isize, h);
                    let xx = mirror((stride * j) as isize - 2 + b as isize, w);
                    acc += binom5(a) * binom5(b) * x[y * w + xx];
                }
            }
            out[i * ow + j] = acc / 1024.0;
        }
    }
    out
}

fn gauss2d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            k[y * size + x] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = k.iter().sum();
    k.iter().map(|v| v / s).collect()
}

/// Full 2-D valid correlation.
fn corr_valid(x: &[f64], h: usize, w: usize, k: &[f64], n: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    acc += k[a * n + b] * x[(y + a) * w + xx + b];
                }
            }
            out[y * ow + xx] = acc;
        }
    }
    (out, oh, ow)
}

/// SSIM with explicit per-window moments.
pub fn ssim_reference(a: &ImageArray<f64>, b: &ImageArray<f64>) -> f64 {
    let (ch, h, w) = a.dims();
    let n = 11;
    let k = gauss2d(n, 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for c in 0..ch {
        let (x, y) = (a.channel(c), b.channel(c));
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..=h - n {
            for j in 0..=w - n {
                let (mut mx, mut my) = (0.0, 0.0);
                for p in 0..n {
                    for q in 0..n {
                        let wt = k[p * n + q];
                        mx += wt * x[(i + p) * w + j + q];
                        my += wt * y[(i + p) * w + j + q];
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for p in 0..n {
                    for q in 0..n {
                        let wt = k[p * n + q];
                        let dx = x[(i + p) * w + j + q] - mx;
                        let dy = y[(i + p) * w + j + q] - my;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cov += wt * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / ch as f64
}

/// Pixel-domain VIF on the 0..255 scale, scalar loops.
pub fn vif_reference(reference: &ImageArray<f64>, distorted: &ImageArray<f64>) -> f64 {
    let (ch, h0, w0) = reference.dims();
    let sigma_nsq = 2.0;
    let eps = 1e-10;
    let mut total = 0.0;
    for c in 0..ch {
        let mut r: Vec<f64> = reference.channel(c).iter().map(|v| v * 255.0).collect();
        let mut d: Vec<f64> = distorted.channel(c).iter().map(|v| v * 255.0).collect();
        let (mut h, mut w) = (h0, w0);
        let (mut num, mut den) = (0.0, 0.0);
        for scale in 1..=4 {
            let n = (1usize << (5 - scale)) + 1;
            let k = gauss2d(n, n as f64 / 5.0);
            if scale > 1 {
                let (fr, fh, fw) = corr_valid(&r, h, w, &k, n);
                let (fd, _, _) = corr_valid(&d, h, w, &k, n);
                let (nh, nw) = (fh.div_ceil(2), fw.div_ceil(2));
                r = (0..nh * nw).map(|i| fr[(i / nw) * 2 * fw + (i % nw) * 2]).collect();
                d = (0..nh * nw).map(|i| fd[(i / nw) * 2 * fw + (i % nw) * 2]).collect();
                h = nh;
                w = nw;
            }
            let rr: Vec<f64> = r.iter().map(|v| v * v).collect();
            let dd: Vec<f64> = d.iter().map(|v| v * v).collect();
            let rd: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a * b).collect();
            let (mu1, _, _) = corr_valid(&r, h, w, &k, n);
            let (mu2, _, _) = corr_valid(&d, h, w, &k, n);
            let (e11, _, _) = corr_valid(&rr, h, w, &k, n);
            let (e22, _, _) = corr_valid(&dd, h, w, &k, n);
            let (e12, _, _) = corr_valid(&rd, h, w, &k, n);
            for i in 0..mu1.len() {
                let s1 = (e11[i] - mu1[i] * mu1[i]).max(0.0);
                let s2 = (e22[i] - mu2[i] * mu2[i]).max(0.0);
                let s12 = e12[i] - mu1[i] * mu2[i];
                let (g, sv, s1) = if s1 < eps {
                    (0.0, s2, 0.0)
                } else {
                    let g = s12 / (s1 + eps);
                    (g, s2 - g * s12, s1)
                };
                let (g, sv) = if s2 < eps { (0.0, 0.0) } else { (g, sv) };
                let (g, sv) = if g < 0.0 { (0.0, s2) } else { (g, sv) };
                let sv = if sv <= eps { eps } else { sv };
                num += (1.0 + g * g * s1 / (sv + sigma_nsq)).log10();
                den += (1.0 + s1 / sigma_nsq).log10();
            }
        }
        total += if den == 0.0 { 1.0 } else { num / den };
    }
    total / ch as f64
}

pub fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
