//! Image-quality and watermark-verification metrics.
//!
//! All image metrics take images in [0, 1]. SSIM-family metrics and VIF are
//! computed per channel and averaged.

mod report;
mod structural;

pub use report::{read_report_jsonl, ReportRecord, SampleRecord, SummaryRecord, Thresholds, VerificationReport};
pub use structural::{ms_ssim, ssim, vif, MS_SSIM_WEIGHTS};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image_array::ImageArray;
use crate::scalar::Scalar;

/// Threshold at which real-valued maps become bits.
pub const BIT_THRESHOLD: f64 = 0.5;
pub const PSNR_MIN_DB: f64 = 35.0;
pub const BER_MAX: f64 = 0.5e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatermarkKind {
    Color,
    Binary,
}

fn same_dims<T: Scalar>(a: &ImageArray<T>, b: &ImageArray<T>) -> Result<()> {
    ensure(a.same_dims(b), || {
        Error::Shape(format!("image dimensions differ: {:?} vs {:?}", a.dims(), b.dims()))
    })
}

pub fn mse<T: Scalar>(a: &ImageArray<T>, b: &ImageArray<T>) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` with peak 1; `+inf` for identical images.
pub fn psnr<T: Scalar>(a: &ImageArray<T>, b: &ImageArray<T>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / m).log10() })
}

/// Fraction of differing bits after thresholding both maps at 0.5.
pub fn ber<T: Scalar>(extracted: &ImageArray<T>, w: &ImageArray<T>) -> Result<f64> {
    same_dims(extracted, w)?;
    let t = T::lit(BIT_THRESHOLD);
    let wrong = extracted
        .data()
        .iter()
        .zip(w.data())
        .filter(|(&x, &y)| (x >= t) != (y >= t))
        .count();
    Ok(wrong as f64 / w.data().len() as f64)
}

/// Whether one extraction counts as a success.
pub fn is_success(kind: WatermarkKind, value: f64, thresholds: &Thresholds) -> bool {
    match kind {
        WatermarkKind::Color => value > thresholds.psnr_min,
        WatermarkKind::Binary => value < thresholds.ber_max,
    }
}

/// Share of successful extractions. `values` are PSNRs (color) or BERs
/// (binary).
pub fn success_rate(values: &[f64], kind: WatermarkKind, thresholds: &Thresholds) -> Result<f64> {
    ensure(!values.is_empty(), || Error::InsufficientData("success rate of an empty set".into()))?;
    let ok = values.iter().filter(|&&v| is_success(kind, v, thresholds)).count();
    Ok(ok as f64 / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = ImageArray::<f64>::filled(3, 8, 8, 0.4);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &ImageArray::zeros(3, 8, 9)).is_err());
    }

    #[test]
    fn ber_cases() {
        let w = ImageArray::<f64>::from_fn(1, 4, 4, |_, y, x| ((x + y) % 2) as f64);
        assert_eq!(ber(&w, &w).unwrap(), 0.0);
        assert_eq!(ber(&w.map(|v| 1.0 - v), &w).unwrap(), 1.0);
        let mut half = w.clone();
        for x in 0..4 {
            for y in 0..2 {
                half.put(0, y, x, 1.0 - w.get(0, y, x));
            }
        }
        assert_eq!(ber(&half, &w).unwrap(), 0.5);
    }

    #[test]
    fn success_rate_cases() {
        let t = Thresholds::default();
        assert!((success_rate(&[36.0, 34.0, 40.0], WatermarkKind::Color, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((success_rate(&[0.0, 0.0, 0.001], WatermarkKind::Binary, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(success_rate(&[], WatermarkKind::Color, &t).is_err());
        assert_eq!(success_rate(&[f64::INFINITY], WatermarkKind::Color, &t).unwrap(), 1.0);
    }
}
