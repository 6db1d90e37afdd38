mod common;

use aawm::antialias::blur_same;
use aawm::metrics::{
    ber, is_success, mse, ms_ssim, psnr, read_report_jsonl, ssim, success_rate, vif, ReportRecord, Thresholds,
    VerificationReport, WatermarkKind,
};
use aawm::ImageArray;
use common::{random_image, rng, ssim_reference, texture, vif_reference};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn blurred(img: &ImageArray<f64>, passes: usize) -> ImageArray<f64> {
    let mut t = img.tensor().clone().reshape(aawm::Shape::new(1, 3, img.height(), img.width())).unwrap();
    for _ in 0..passes {
        t = blur_same(&t);
    }
    ImageArray::from_tensor(t).unwrap()
}

fn noisy(img: &ImageArray<f64>, sigma: f64, seed: u64) -> ImageArray<f64> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let (c, h, w) = img.dims();
    ImageArray::from_fn(c, h, w, |c, y, x| (img.get(c, y, x) + normal.sample(&mut r)).clamp(0.0, 1.0))
}

#[test]
fn psnr_offset_is_20_db() {
    let a = ImageArray::<f64>::filled(3, 16, 16, 0.45);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
}

#[test]
fn psnr_matches_scalar_loop() {
    let a = random_image(3, 32, 1);
    let b = random_image(3, 32, 2);
    let mut sum = 0.0;
    for c in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                sum += (a.get(c, y, x) - b.get(c, y, x)).powi(2);
            }
        }
    }
    let want = 10.0 * (1.0 / (sum / (3.0 * 32.0 * 32.0))).log10();
    assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    assert!((mse(&a, &b).unwrap() - sum / 3072.0).abs() < 1e-12);
}

#[test]
fn ber_cases() {
    let w = ImageArray::<f64>::from_fn(3, 8, 8, |_, y, x| ((x / 2 + y) % 2) as f64);
    assert_eq!(ber(&w, &w).unwrap(), 0.0);
    assert_eq!(ber(&w.map(|v| 1.0 - v), &w).unwrap(), 1.0);
    let half = ImageArray::from_fn(3, 8, 8, |c, y, x| if y < 4 { 1.0 - w.get(c, y, x) } else { w.get(c, y, x) });
    assert_eq!(ber(&half, &w).unwrap(), 0.5);
    // Soft values are thresholded at 0.5.
    assert_eq!(ber(&w.map(|v| 0.2 + 0.6 * v), &w).unwrap(), 0.0);
}

#[test]
fn success_rate_cases() {
    let t = Thresholds::default();
    let sr = success_rate(&[36.0, 34.0, 40.0], WatermarkKind::Color, &t).unwrap();
    assert!((sr - 2.0 / 3.0).abs() < 1e-15);
    let sr = success_rate(&[0.0, 0.0, 0.001], WatermarkKind::Binary, &t).unwrap();
    assert!((sr - 2.0 / 3.0).abs() < 1e-15);
    assert!(success_rate(&[], WatermarkKind::Color, &t).is_err());
    assert!(!is_success(WatermarkKind::Color, 35.0, &t));
    assert!(!is_success(WatermarkKind::Binary, 0.0005, &t));
    assert!(is_success(WatermarkKind::Color, f64::INFINITY, &t));
}

#[test]
fn structural_identity_is_one() {
    let a = texture(64, 3);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
    assert!((vif(&a, &a).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn ssim_constant_extremes() {
    let a = ImageArray::<f64>::filled(3, 32, 32, 0.0);
    let b = ImageArray::<f64>::filled(3, 32, 32, 1.0);
    let s = ssim(&a, &b).unwrap();
    let c1 = 0.01f64 * 0.01;
    assert!(s < 0.01);
    assert!((s - c1 / (1.0 + c1)).abs() < 1e-12);
}

#[test]
fn ssim_matches_reference() {
    for seed in 0..3 {
        let a = random_image(3, 24, seed);
        let b = random_image(3, 24, seed + 50);
        assert!((ssim(&a, &b).unwrap() - ssim_reference(&a, &b)).abs() < 1e-6);
        let t = texture(32, seed);
        let n = noisy(&t, 0.05, seed);
        assert!((ssim(&t, &n).unwrap() - ssim_reference(&t, &n)).abs() < 1e-6);
    }
}

#[test]
fn vif_matches_reference() {
    for seed in 0..3 {
        let t = texture(64, seed);
        let n = noisy(&t, 0.1, seed + 9);
        let got = vif(&t, &n).unwrap();
        let want = vif_reference(&t, &n);
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
}

#[test]
fn vif_orders_nested_blur() {
    let t = texture(64, 5);
    let light = vif(&t, &blurred(&t, 1)).unwrap();
    let strong = vif(&t, &blurred(&t, 6)).unwrap();
    assert!(strong < light, "{strong} !< {light}");
}

#[test]
fn ms_ssim_orders_noise() {
    let t = texture(64, 6);
    let a = ms_ssim(&t, &noisy(&t, 0.02, 1)).unwrap();
    let b = ms_ssim(&t, &noisy(&t, 0.2, 1)).unwrap();
    assert!(b < a && a < 1.0 && b >= 0.0);
}

#[test]
fn dimension_mismatch_rejected() {
    let a = random_image(3, 16, 1);
    let b = random_image(3, 18, 1);
    assert!(psnr(&a, &b).is_err());
    assert!(ber(&a, &b).is_err());
    assert!(ssim(&a, &b).is_err());
    assert!(vif(&a, &b).is_err());
}

#[test]
fn report_jsonl_round_trip() {
    let mut report = VerificationReport::new("jpeg_q50", WatermarkKind::Color, Thresholds::default());
    report.push(0, 41.5, 0.001);
    report.push(1, f64::INFINITY, 0.0).psnr_marked = Some(33.25);
    report.push(2, 12.0, 0.4);
    let text = report.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), 4);
    let records = read_report_jsonl(text.as_bytes()).unwrap();
    match &records[1] {
        ReportRecord::Sample(s) => {
            assert_eq!(s.psnr_w, f64::INFINITY);
            assert_eq!(s.psnr_marked, Some(33.25));
            assert!(s.success);
        }
        other => panic!("{other:?}"),
    }
    match &records[3] {
        ReportRecord::Summary(s) => {
            assert_eq!(s.successes, 2);
            assert!((s.sr - 2.0 / 3.0).abs() < 1e-15);
        }
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn psnr_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = random_image(3, 8, s1);
        let b = random_image(3, 8, s2);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ber_in_unit_interval_and_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = random_image(3, 8, s1);
        let b = random_image(3, 8, s2);
        let e = ber(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(e, ber(&b, &a).unwrap());
    }

    #[test]
    fn ssim_bounded_and_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = random_image(3, 16, s1);
        let b = random_image(3, 16, s2);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn vif_nonnegative(seed in any::<u64>(), sigma in 0.01f64..0.3) {
        let t = texture(48, seed);
        let v = vif(&t, &noisy(&t, sigma, seed)).unwrap();
        prop_assert!(v >= 0.0);
    }
}
