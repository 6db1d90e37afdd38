//! Images as planar real arrays in `[0, 1]`, plus PNG boundaries.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A `C x H x W` image stored planar (channel-major), nominally in `[0, 1]`.
///
/// Backed by a batch-of-one [`Tensor`], so it moves in and out of the
/// network code without copies.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageArray<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> ImageArray<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        ImageArray {
            tensor: Tensor::full(Shape::new(1, channels, height, width), value),
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut f = f;
        ImageArray {
            tensor: Tensor::from_fn(Shape::new(1, channels, height, width), |_, c, y, x| {
                f(c, y, x)
            }),
        }
    }

    pub fn from_planar(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        Ok(ImageArray {
            tensor: Tensor::from_vec(Shape::new(1, channels, height, width), data)?,
        })
    }

    pub fn from_tensor(tensor: Tensor<T>) -> Result<Self> {
        if tensor.shape().n != 1 {
            return Err(Error::Shape(format!(
                "image tensor must hold one sample, got {}",
                tensor.shape()
            )));
        }
        Ok(ImageArray { tensor })
    }

    /// One image per sample of a batch tensor.
    pub fn split_batch(batch: &Tensor<T>) -> Vec<Self> {
        (0..batch.shape().n)
            .map(|i| ImageArray {
                tensor: batch.select(i),
            })
            .collect()
    }

    pub fn stack(images: &[ImageArray<T>]) -> Result<Tensor<T>> {
        let parts: Vec<&Tensor<T>> = images.iter().map(|i| &i.tensor).collect();
        Tensor::cat_batch(&parts)
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape().c
    }

    pub fn height(&self) -> usize {
        self.tensor.shape().h
    }

    pub fn width(&self) -> usize {
        self.tensor.shape().w
    }

    /// `(channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    pub fn is_square(&self) -> bool {
        self.height() == self.width()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn data(&self) -> &[T] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        self.tensor.data_mut()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        self.tensor.plane(0, c)
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        self.tensor.plane_mut(0, c)
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.tensor.at(0, c, y, x)
    }

    #[inline]
    pub fn put(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.tensor.set(0, c, y, x, v)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ImageArray {
            tensor: self.tensor.map(f),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    /// BT.601 luma for 3-channel images; single-channel images pass through.
    pub fn luma(&self) -> Result<Vec<T>> {
        match self.channels() {
            1 => Ok(self.channel(0).to_vec()),
            3 => {
                let [wr, wg, wb] = LUMA_WEIGHTS.map(T::lit);
                let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
                Ok(r.iter()
                    .zip(g)
                    .zip(b)
                    .map(|((&r, &g), &b)| wr * r + wg * g + wb * b)
                    .collect())
            }
            c => Err(Error::Shape(format!("luma needs 1 or 3 channels, got {c}"))),
        }
    }

    /// Mean over channels, one value per pixel.
    pub fn channel_mean(&self) -> Vec<T> {
        let c = self.channels();
        let plane = self.height() * self.width();
        let inv = T::one() / T::from_usize_lossy(c);
        (0..plane)
            .map(|i| (0..c).map(|ch| self.channel(ch)[i]).sum::<T>() * inv)
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ImageArray<U> {
        ImageArray {
            tensor: self.tensor.cast(),
        }
    }

    /// Loads any PNG/JPEG as RGB in `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let scale = T::one() / T::lit(255.0);
        ImageArray::from_fn(3, h, w, |c, y, x| {
            T::from_u8(img.get_pixel(x as u32, y as u32)[c]).unwrap() * scale
        })
    }

    /// Quantizes to 8 bits per channel (round half up, clamped).
    pub fn to_rgb8(&self) -> Result<RgbImage> {
        let (c, h, w) = self.dims();
        if c != 3 && c != 1 {
            return Err(Error::Shape(format!("cannot encode {c}-channel image")));
        }
        let mut out: RgbImage = ImageBuffer::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = if c == 3 {
                    [0, 1, 2].map(|ch| quantize(self.get(ch, y, x)))
                } else {
                    [quantize(self.get(0, y, x)); 3]
                };
                out.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        Ok(out)
    }

    /// Rounds every value to the nearest 8-bit level, matching a PNG
    /// round trip exactly.
    pub fn quantized(&self) -> Self {
        let scale = T::one() / T::lit(255.0);
        self.map(|v| T::from_u8(quantize(v)).unwrap() * scale)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8()?
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.as_f64();
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single-channel `[0, 1]` plane as 8-bit grayscale PNG.
pub fn save_gray_png<T: Scalar>(
    values: &[T],
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if values.len() != height * width {
        return Err(Error::Shape("gray plane size mismatch".into()));
    }
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([quantize(values[y as usize * width + x as usize])])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}
