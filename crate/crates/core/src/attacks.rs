//! Preprocessing attacks: the stochastic training layer and the fixed
//! evaluation grid.

use std::fmt;

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image_array::{quantize, ImageArray};
use crate::nn::ops::{flip_tensor, resize_bilinear_tensor};
use crate::nn::{FlipAxis, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    Identity,
    GaussianNoise { sigma: f64, seed: u64 },
    Resize { target_side: usize },
    Jpeg { quality: u8 },
    Flip { axis: FlipAxis },
}

/// The four attack families (identity excluded).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    GaussianNoise,
    Resize,
    Jpeg,
    Flip,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 4] = [
        AttackFamily::GaussianNoise,
        AttackFamily::Resize,
        AttackFamily::Jpeg,
        AttackFamily::Flip,
    ];
}

impl AttackSpec {
    pub fn family(&self) -> Option<AttackFamily> {
        match self {
            AttackSpec::Identity => None,
            AttackSpec::GaussianNoise { .. } => Some(AttackFamily::GaussianNoise),
            AttackSpec::Resize { .. } => Some(AttackFamily::Resize),
            AttackSpec::Jpeg { .. } => Some(AttackFamily::Jpeg),
            AttackSpec::Flip { .. } => Some(AttackFamily::Flip),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackSpec::Identity | AttackSpec::Flip { .. } => Ok(()),
            AttackSpec::GaussianNoise { sigma, .. } => ensure(sigma.is_finite() && sigma >= 0.0, || {
                Error::Argument(format!("noise sigma must be finite and nonnegative, got {sigma}"))
            }),
            AttackSpec::Resize { target_side } => ensure(target_side >= 1, || {
                Error::Argument("resize target side must be positive".into())
            }),
            AttackSpec::Jpeg { quality } => ensure((1..=100).contains(&quality), || {
                Error::Argument(format!("JPEG quality must lie in [1, 100], got {quality}"))
            }),
        }
    }

    /// Short label used in reports, e.g. `jpeg_q50`.
    pub fn label(&self) -> String {
        match self {
            AttackSpec::Identity => "identity".into(),
            AttackSpec::GaussianNoise { sigma, .. } => format!("noise_s{sigma}"),
            AttackSpec::Resize { target_side } => format!("resize_{target_side}"),
            AttackSpec::Jpeg { quality } => format!("jpeg_q{quality}"),
            AttackSpec::Flip { axis } => match axis {
                FlipAxis::Horizontal => "flip_h".into(),
                FlipAxis::Vertical => "flip_v".into(),
            },
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parameter ranges for [`sample_attack`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackRanges {
    /// Open interval `(0, sigma_max)`.
    pub sigma_max: f64,
    pub resize_min: usize,
    pub resize_max: usize,
    pub quality_min: u8,
    pub quality_max: u8,
}

impl Default for AttackRanges {
    fn default() -> Self {
        AttackRanges {
            sigma_max: 0.2,
            resize_min: 128,
            resize_max: 512,
            quality_min: 50,
            quality_max: 90,
        }
    }
}

impl AttackRanges {
    /// Resize bounds scaled from the 256-pixel defaults to `side`.
    pub fn for_side(side: usize) -> Self {
        AttackRanges {
            resize_min: (side / 2).max(1),
            resize_max: side * 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.sigma_max > 0.0 && self.sigma_max.is_finite(), || {
            Error::Config("sigma_max must be positive".into())
        })?;
        ensure(self.resize_min >= 1 && self.resize_min <= self.resize_max, || {
            Error::Config("resize range is empty".into())
        })?;
        ensure(
            self.quality_min >= 1 && self.quality_min <= self.quality_max && self.quality_max <= 100,
            || Error::Config("JPEG quality range must lie within [1, 100]".into()),
        )
    }
}

/// Identity with probability 1/5, otherwise one family uniformly with
/// parameters uniform over `ranges`.
pub fn sample_attack<R: Rng + ?Sized>(rng: &mut R, ranges: &AttackRanges) -> AttackSpec {
    match rng.random_range(0..5u8) {
        0 => AttackSpec::Identity,
        1 => {
            let mut sigma = 0.0;
            while sigma <= 0.0 {
                sigma = rng.random::<f64>() * ranges.sigma_max;
            }
            AttackSpec::GaussianNoise {
                sigma,
                seed: rng.random(),
            }
        }
        2 => AttackSpec::Resize {
            target_side: rng.random_range(ranges.resize_min..=ranges.resize_max),
        },
        3 => AttackSpec::Jpeg {
            quality: rng.random_range(ranges.quality_min..=ranges.quality_max),
        },
        _ => AttackSpec::Flip {
            axis: if rng.random::<bool>() {
                FlipAxis::Horizontal
            } else {
                FlipAxis::Vertical
            },
        },
    }
}

fn noise_tensor<T: Scalar>(shape: Shape, sigma: f64, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    Tensor::from_fn(shape, |_, _, _, _| T::lit(normal.sample(&mut rng)))
}

/// Adds `N(0, sigma^2)` per element and clamps to [0, 1].
pub fn gaussian_noise<T: Scalar>(img: &ImageArray<T>, sigma: f64, seed: u64) -> Result<ImageArray<T>> {
    AttackSpec::GaussianNoise { sigma, seed }.validate()?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let noise = noise_tensor::<T>(img.tensor().shape(), sigma, seed);
    ImageArray::from_tensor(img.tensor().zip_map(&noise, |a, b| (a + b).max(T::zero()).min(T::one())))
}

/// Bilinear resize to `target_side` and back.
pub fn resize_attack<T: Scalar>(img: &ImageArray<T>, target_side: usize) -> Result<ImageArray<T>> {
    AttackSpec::Resize { target_side }.validate()?;
    let (_, h, w) = img.dims();
    let small = resize_bilinear_tensor(img.tensor(), target_side, target_side);
    let back = resize_bilinear_tensor(&small, h, w);
    Ok(ImageArray::from_tensor(back)?.clamp01())
}

/// Baseline JPEG encode at `quality`, then decode.
pub fn jpeg_attack<T: Scalar>(img: &ImageArray<T>, quality: u8) -> Result<ImageArray<T>> {
    AttackSpec::Jpeg { quality }.validate()?;
    let (c, h, w) = img.dims();
    let (bytes, color) = match c {
        3 => {
            let mut buf = Vec::with_capacity(3 * h * w);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..3 {
                        buf.push(quantize(img.get(ch, y, x)));
                    }
                }
            }
            (buf, ExtendedColorType::Rgb8)
        }
        1 => (img.data().iter().map(|&v| quantize(v)).collect(), ExtendedColorType::L8),
        _ => return Err(Error::Shape(format!("JPEG needs 1 or 3 channels, got {c}"))),
    };
    let mut encoded = Vec::new();
    JpegEncoder::new_with_quality(&mut encoded, quality)
        .encode(&bytes, w as u32, h as u32, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&encoded, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let scale = 1.0 / 255.0;
    Ok(if c == 3 {
        let rgb = decoded.to_rgb8();
        ImageArray::from_fn(3, h, w, |ch, y, x| T::lit(rgb.get_pixel(x as u32, y as u32)[ch] as f64 * scale))
    } else {
        let l = decoded.to_luma8();
        ImageArray::from_fn(1, h, w, |_, y, x| T::lit(l.get_pixel(x as u32, y as u32)[0] as f64 * scale))
    })
}

pub fn flip_attack<T: Scalar>(img: &ImageArray<T>, axis: FlipAxis) -> ImageArray<T> {
    ImageArray::from_tensor(flip_tensor(img.tensor(), axis)).expect("batch of one")
}

/// Dispatches `spec` on one image.
pub fn apply<T: Scalar>(spec: &AttackSpec, img: &ImageArray<T>) -> Result<ImageArray<T>> {
    spec.validate()?;
    match *spec {
        AttackSpec::Identity => Ok(img.clone()),
        AttackSpec::GaussianNoise { sigma, seed } => gaussian_noise(img, sigma, seed),
        AttackSpec::Resize { target_side } => resize_attack(img, target_side),
        AttackSpec::Jpeg { quality } => jpeg_attack(img, quality),
        AttackSpec::Flip { axis } => Ok(flip_attack(img, axis)),
    }
}

/// Records `spec` on a batch. Noise, resize and flip carry their true
/// gradients (noise is additive, then clamped); JPEG is straight-through.
pub fn apply_graph<T: Scalar>(g: &Graph<T>, x: Var, spec: &AttackSpec) -> Result<Var> {
    spec.validate()?;
    let s = g.shape(x);
    Ok(match *spec {
        AttackSpec::Identity => x,
        AttackSpec::GaussianNoise { sigma, seed } => {
            if sigma == 0.0 {
                x
            } else {
                let noisy = g.add_const(x, &noise_tensor::<T>(s, sigma, seed));
                g.clamp(noisy, T::zero(), T::one())
            }
        }
        AttackSpec::Resize { target_side } => {
            let small = g.resize_bilinear(x, target_side, target_side);
            let back = g.resize_bilinear(small, s.h, s.w);
            g.clamp(back, T::zero(), T::one())
        }
        AttackSpec::Jpeg { quality } => {
            let value = g.value(x);
            let mut out = Vec::with_capacity(s.n);
            for img in ImageArray::split_batch(&value) {
                out.push(jpeg_attack(&img, quality)?);
            }
            g.straight_through(x, ImageArray::stack(&out)?)
        }
        AttackSpec::Flip { axis } => g.flip(x, axis),
    })
}

/// Evaluation grid: noise sigma {0.1, 0.15, 0.2}, resize sides
/// {128, 196, 512}, JPEG quality {50, 70, 90}, both flips.
pub fn full_grid(seed: u64) -> Vec<AttackSpec> {
    let mut grid = vec![AttackSpec::Identity];
    for (i, sigma) in [0.1, 0.15, 0.2].into_iter().enumerate() {
        grid.push(AttackSpec::GaussianNoise {
            sigma,
            seed: seed.wrapping_add(i as u64),
        });
    }
    for target_side in [128, 196, 512] {
        grid.push(AttackSpec::Resize { target_side });
    }
    for quality in [50, 70, 90] {
        grid.push(AttackSpec::Jpeg { quality });
    }
    grid.push(AttackSpec::Flip {
        axis: FlipAxis::Horizontal,
    });
    grid.push(AttackSpec::Flip {
        axis: FlipAxis::Vertical,
    });
    grid
}

/// The mildest grid point of each family.
pub fn mild_grid(seed: u64) -> Vec<AttackSpec> {
    vec![
        AttackSpec::GaussianNoise { sigma: 0.1, seed },
        AttackSpec::Resize { target_side: 512 },
        AttackSpec::Jpeg { quality: 90 },
        AttackSpec::Flip {
            axis: FlipAxis::Horizontal,
        },
        AttackSpec::Flip {
            axis: FlipAxis::Vertical,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(side: usize) -> ImageArray<f64> {
        ImageArray::from_fn(3, side, side, |c, y, x| {
            0.5 + 0.3 * ((x as f64 * 0.3 + c as f64).sin() * (y as f64 * 0.2).cos())
        })
    }

    #[test]
    fn noise_identity_and_seeding() {
        let img = pattern(16);
        assert_eq!(gaussian_noise(&img, 0.0, 1).unwrap(), img);
        assert_eq!(gaussian_noise(&img, 0.1, 7).unwrap(), gaussian_noise(&img, 0.1, 7).unwrap());
        assert_ne!(gaussian_noise(&img, 0.1, 7).unwrap(), gaussian_noise(&img, 0.1, 8).unwrap());
        assert!(gaussian_noise(&img, -0.1, 1).is_err());
    }

    #[test]
    fn resize_cases() {
        let img = pattern(32);
        let same = resize_attack(&img, 32).unwrap();
        assert!(same.tensor().max_abs_diff(img.tensor()) < 1e-12);
        let flat = ImageArray::<f64>::filled(3, 32, 32, 0.37);
        for t in [16, 20, 64, 100] {
            assert!(resize_attack(&flat, t).unwrap().tensor().max_abs_diff(flat.tensor()) < 1e-12);
        }
    }

    #[test]
    fn flip_cases() {
        let img = pattern(8);
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            assert_eq!(flip_attack(&flip_attack(&img, axis), axis), img);
        }
        let rot = flip_attack(&flip_attack(&img, FlipAxis::Horizontal), FlipAxis::Vertical);
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(rot.get(c, y, x), img.get(c, 7 - y, 7 - x));
                }
            }
        }
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let img = pattern(16);
        assert_eq!(apply(&AttackSpec::Identity, &img).unwrap(), img);
        assert_eq!(
            apply(&AttackSpec::GaussianNoise { sigma: 0.05, seed: 3 }, &img).unwrap(),
            gaussian_noise(&img, 0.05, 3).unwrap()
        );
        assert_eq!(
            apply(&AttackSpec::Resize { target_side: 9 }, &img).unwrap(),
            resize_attack(&img, 9).unwrap()
        );
        assert_eq!(
            apply(&AttackSpec::Jpeg { quality: 70 }, &img).unwrap(),
            jpeg_attack(&img, 70).unwrap()
        );
        assert_eq!(
            apply(&AttackSpec::Flip { axis: FlipAxis::Vertical }, &img).unwrap(),
            flip_attack(&img, FlipAxis::Vertical)
        );
        assert!(apply(&AttackSpec::Jpeg { quality: 0 }, &img).is_err());
        assert!(apply(&AttackSpec::Resize { target_side: 0 }, &img).is_err());
    }

    #[test]
    fn graph_attacks_match_image_attacks() {
        let img = pattern(16).cast::<f32>();
        let specs = [
            AttackSpec::GaussianNoise { sigma: 0.1, seed: 2 },
            AttackSpec::Resize { target_side: 11 },
            AttackSpec::Jpeg { quality: 60 },
            AttackSpec::Flip { axis: FlipAxis::Horizontal },
        ];
        for spec in specs {
            let g = Graph::new();
            let x = g.constant(img.tensor().clone());
            let y = apply_graph(&g, x, &spec).unwrap();
            let direct = apply(&spec, &img).unwrap();
            assert!(g.value(y).max_abs_diff(direct.tensor()) < 1e-6, "{spec}");
        }
    }

    #[test]
    fn spec_json_is_tagged() {
        let spec = AttackSpec::Jpeg { quality: 50 };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(s, r#"{"kind":"jpeg","quality":50}"#);
        assert_eq!(serde_json::from_str::<AttackSpec>(&s).unwrap(), spec);
        assert!(serde_json::from_str::<AttackSpec>(r#"{"kind":"jpeg","quality":50,"x":1}"#).is_err());
    }

    #[test]
    fn grid_layout() {
        let grid = full_grid(0);
        assert_eq!(grid.len(), 1 + 3 + 3 + 3 + 2);
        for fam in AttackFamily::ALL {
            assert!(mild_grid(0).iter().any(|s| s.family() == Some(fam)));
        }
    }
}
