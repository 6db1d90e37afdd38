//! 2-D DCT-II analysis: transforms, averaged log-magnitude heat maps, a
//! high-frequency energy score, and DCT coefficient truncation.
//!
//! The transform is the orthonormal DCT-II,
//!
//! ```text
//! b[i][j] = c(i) c(j) sum_p sum_q a[p][q] cos((2p+1) i pi / 2n) cos((2q+1) j pi / 2n)
//! c(0) = sqrt(1/n), c(k>0) = sqrt(2/n)
//! ```
//!
//! evaluated separably as `B = C A C^T` with the cosine matrix `C`, and
//! inverted as `A = C^T B C`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::image_array::{save_gray_png, ImageArray};
use crate::scalar::Scalar;

/// Magic prefix of the binary heat-map layout.
pub const HEATMAP_MAGIC: &[u8; 8] = b"AAWM-HM1";

/// Per-channel `n x n` DCT-II coefficients, channel-major, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMap<T> {
    n: usize,
    channel_count: usize,
    coeffs: Vec<T>,
}

impl<T: Scalar> SpectralMap<T> {
    pub fn new(n: usize, channel_count: usize, coeffs: Vec<T>) -> Result<Self> {
        ensure(n >= 1 && channel_count >= 1, || {
            Error::Shape("spectral map needs n >= 1 and at least one channel".into())
        })?;
        ensure(coeffs.len() == n * n * channel_count, || {
            Error::Shape(format!(
                "{} coefficients for {channel_count} channels of {n}x{n}",
                coeffs.len()
            ))
        })?;
        ensure(coeffs.iter().all(|v| v.is_finite()), || {
            Error::Value("spectral coefficients must be finite".into())
        })?;
        Ok(SpectralMap {
            n,
            channel_count,
            coeffs,
        })
    }

    pub fn zeros(n: usize, channel_count: usize) -> Self {
        SpectralMap {
            n,
            channel_count,
            coeffs: vec![T::zero(); n * n * channel_count],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.n * self.n;
        &self.coeffs[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.n * self.n;
        &mut self.coeffs[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> T {
        self.coeffs[(c * self.n + row) * self.n + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: T) {
        self.coeffs[(c * self.n + row) * self.n + col] = v;
    }

    /// Sum of squared coefficients over all channels.
    pub fn energy(&self) -> T {
        self.coeffs.iter().map(|&v| v * v).sum()
    }
}

/// Orthonormal DCT-II basis: row `k` holds `c(k) cos((2p+1) k pi / 2n)`.
pub fn cosine_matrix<T: Scalar>(n: usize) -> Vec<T> {
    let nf = n as f64;
    let mut m = Vec::with_capacity(n * n);
    for k in 0..n {
        let ck = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for p in 0..n {
            let angle = std::f64::consts::PI * ((2 * p + 1) * k) as f64 / (2.0 * nf);
            m.push(T::lit(ck * angle.cos()));
        }
    }
    m
}

// out = L * X * R^T when `right_transposed`, else L^T * X * R (all n x n).
fn sandwich<T: Scalar>(basis: &[T], x: &[T], n: usize, forward: bool) -> Vec<T> {
    let ni = n as isize;
    let mut tmp = vec![T::zero(); n * n];
    let mut out = vec![T::zero(); n * n];
    if forward {
        // tmp = C X ; out = tmp C^T
        T::gemm(n, n, n, T::one(), basis, ni, 1, x, ni, 1, T::zero(), &mut tmp, ni, 1);
        T::gemm(n, n, n, T::one(), &tmp, ni, 1, basis, 1, ni, T::zero(), &mut out, ni, 1);
    } else {
        // tmp = C^T X ; out = tmp C
        T::gemm(n, n, n, T::one(), basis, 1, ni, x, ni, 1, T::zero(), &mut tmp, ni, 1);
        T::gemm(n, n, n, T::one(), &tmp, ni, 1, basis, ni, 1, T::zero(), &mut out, ni, 1);
    }
    out
}

/// Forward 2-D DCT of one square matrix given row-major.
pub fn dct2<T: Scalar>(matrix: &[T], rows: usize, cols: usize) -> Result<SpectralMap<T>> {
    ensure(rows == cols && rows >= 1, || {
        Error::Shape(format!("dct2 needs a non-empty square matrix, got {rows}x{cols}"))
    })?;
    ensure(matrix.len() == rows * cols, || {
        Error::Shape(format!("{} values for a {rows}x{cols} matrix", matrix.len()))
    })?;
    ensure(matrix.iter().all(|v| v.is_finite()), || {
        Error::Value("dct2 input contains NaN or infinity".into())
    })?;
    let basis = cosine_matrix::<T>(rows);
    Ok(SpectralMap {
        n: rows,
        channel_count: 1,
        coeffs: sandwich(&basis, matrix, rows, true),
    })
}

/// Per-channel forward DCT of a square image.
pub fn dct2_image<T: Scalar>(img: &ImageArray<T>) -> Result<SpectralMap<T>> {
    let (c, h, w) = img.dims();
    ensure(h == w && h >= 1, || {
        Error::Shape(format!("dct2 needs a square image, got {h}x{w}"))
    })?;
    ensure(img.data().iter().all(|v| v.is_finite()), || {
        Error::Value("dct2 input contains NaN or infinity".into())
    })?;
    let basis = cosine_matrix::<T>(h);
    let mut coeffs = Vec::with_capacity(c * h * h);
    for ch in 0..c {
        coeffs.extend(sandwich(&basis, img.channel(ch), h, true));
    }
    Ok(SpectralMap {
        n: h,
        channel_count: c,
        coeffs,
    })
}

/// Inverse transform; one output channel per spectral channel.
pub fn idct2<T: Scalar>(spec: &SpectralMap<T>) -> Result<ImageArray<T>> {
    ensure(spec.coeffs.iter().all(|v| v.is_finite()), || {
        Error::Value("idct2 input contains NaN or infinity".into())
    })?;
    let n = spec.n;
    let basis = cosine_matrix::<T>(n);
    let mut data = Vec::with_capacity(spec.coeffs.len());
    for ch in 0..spec.channel_count {
        data.extend(sandwich(&basis, spec.channel(ch), n, false));
    }
    ImageArray::from_planar(spec.channel_count, n, n, data)
}

/// Averaged `log(1 + |b|)` DCT magnitudes of luma.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub n: usize,
    pub values: Vec<f64>,
    pub sample_count: usize,
}

/// Heat map averaged over a corpus of equally sized square images.
pub fn spectrum_heatmap<T: Scalar>(images: &[ImageArray<T>]) -> Result<HeatMap> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData("heat map needs at least one image".into()))?;
    let (_, h, w) = first.dims();
    ensure(h == w, || Error::Shape(format!("heat map needs square images, got {h}x{w}")))?;
    let basis = cosine_matrix::<T>(h);
    let mut acc = vec![0.0f64; h * h];
    for img in images {
        ensure(img.height() == h && img.width() == w, || {
            Error::Shape(format!(
                "heat map images differ in size: {}x{} vs {h}x{w}",
                img.height(),
                img.width()
            ))
        })?;
        let luma = img.luma()?;
        ensure(luma.iter().all(|v| v.is_finite()), || {
            Error::Value("heat map input contains NaN or infinity".into())
        })?;
        let coeffs = sandwich(&basis, &luma, h, true);
        for (a, b) in acc.iter_mut().zip(coeffs) {
            *a += b.as_f64().abs().ln_1p();
        }
    }
    let inv = 1.0 / images.len() as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    Ok(HeatMap {
        n: h,
        values: acc,
        sample_count: images.len(),
    })
}

fn band_start(cutoff: f64, n: usize) -> usize {
    // Tolerate cutoff = keep / n reproducing `keep` up to rounding.
    (cutoff * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Share of spectral energy in the band `row >= cutoff*n || col >= cutoff*n`.
///
/// Returns 0 for an all-zero spectrum.
pub fn hf_energy_ratio<T: Scalar>(spec: &SpectralMap<T>, cutoff: f64) -> Result<f64> {
    ensure(cutoff > 0.0 && cutoff < 1.0, || {
        Error::Argument(format!("cutoff must lie in (0, 1), got {cutoff}"))
    })?;
    let n = spec.n;
    let start = band_start(cutoff, n);
    let (mut high, mut total) = (0.0f64, 0.0f64);
    for ch in 0..spec.channel_count {
        let plane = spec.channel(ch);
        for r in 0..n {
            for c in 0..n {
                let e = plane[r * n + c].as_f64().powi(2);
                total += e;
                if r >= start || c >= start {
                    high += e;
                }
            }
        }
    }
    Ok(if total == 0.0 { 0.0 } else { high / total })
}

/// Convenience: [`hf_energy_ratio`] of an image's per-channel spectrum.
pub fn image_hf_energy_ratio<T: Scalar>(img: &ImageArray<T>, cutoff: f64) -> Result<f64> {
    hf_energy_ratio(&dct2_image(img)?, cutoff)
}

/// Zeroes every coefficient outside the top-left `keep x keep` block,
/// without clamping the reconstruction.
pub fn lowpass_filter_unclamped<T: Scalar>(img: &ImageArray<T>, keep: usize) -> Result<ImageArray<T>> {
    let n = img.height();
    ensure(img.is_square(), || {
        Error::Shape(format!("low-pass filter needs a square image, got {}x{}", n, img.width()))
    })?;
    ensure(keep >= 1 && keep <= n, || {
        Error::Argument(format!("keep must be in 1..={n}, got {keep}"))
    })?;
    let mut spec = dct2_image(img)?;
    for ch in 0..spec.channel_count {
        let plane = spec.channel_mut(ch);
        for r in 0..n {
            for c in 0..n {
                if r >= keep || c >= keep {
                    plane[r * n + c] = T::zero();
                }
            }
        }
    }
    idct2(&spec)
}

/// Per-channel DCT coefficient truncation to the top-left `keep x keep`
/// block, clamped back to `[0, 1]`.
pub fn lowpass_filter_image<T: Scalar>(img: &ImageArray<T>, keep: usize) -> Result<ImageArray<T>> {
    Ok(lowpass_filter_unclamped(img, keep)?.clamp01())
}

impl HeatMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    /// Location of the largest entry.
    pub fn argmax(&self) -> (usize, usize) {
        let (idx, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        (idx / self.n, idx % self.n)
    }

    /// Min-max normalized to `[0, 1]`; a flat map becomes all zeros.
    pub fn normalized(&self) -> Vec<f64> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_gray_png(&self.normalized(), self.n, self.n, path)
    }

    /// `"AAWM-HM1"`, `u32 n`, `u32 sample_count`, then `n*n` little-endian
    /// `f64` values in row-major order.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(HEATMAP_MAGIC)?;
        out.write_all(&(self.n as u32).to_le_bytes())?;
        out.write_all(&(self.sample_count as u32).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        let mut word = [0u8; 4];
        let io = |e| Error::io("<heat map stream>", e);
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != HEATMAP_MAGIC {
            return Err(Error::Value("not an AAWM-HM1 heat map".into()));
        }
        input.read_exact(&mut word).map_err(io)?;
        let n = u32::from_le_bytes(word) as usize;
        input.read_exact(&mut word).map_err(io)?;
        let sample_count = u32::from_le_bytes(word) as usize;
        let mut buf = vec![0u8; n * n * 8];
        input.read_exact(&mut buf).map_err(io)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(HeatMap {
            n,
            values,
            sample_count,
        })
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_binary(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
