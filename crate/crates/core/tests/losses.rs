mod common;

use std::sync::Arc;

use aawm::losses::{
    composite_value, loss_adversarial, loss_adversarial_g, loss_composite, loss_fidelity, loss_mark_extract,
    loss_nonmarked, loss_perceptual, CompositeParts, LossWeights, NoiseTarget,
};
use aawm::models::Vgg19;
use aawm::nn::Graph;
use aawm::{ImageArray, Shape, Tensor};
use common::{random_image, rng};
use proptest::prelude::*;
use rand::Rng;

fn batch(n: usize, side: usize, seed: u64) -> Tensor<f64> {
    Tensor::uniform(Shape::new(n, 3, side, side), 0.0, 1.0, &mut rng(seed))
}

fn l1_scalar(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

fn mean_ln(v: &[f64], complement: bool) -> f64 {
    let mut s = 0.0;
    for &p in v {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        s += if complement { (1.0 - p).ln() } else { p.ln() };
    }
    s / v.len() as f64
}

#[test]
fn mark_extract_matches_scalar_loop() {
    let x = batch(3, 8, 1);
    let w = random_image(3, 8, 2);
    let g = Graph::new();
    let v = loss_mark_extract(&g, g.constant(x.clone()), &w).unwrap();
    let mut want = 0.0;
    for n in 0..3 {
        want += l1_scalar(x.sample(n), w.data()) / 3.0;
    }
    assert!((g.item(v) - want).abs() < 1e-9);
    assert_eq!(g.item(loss_mark_extract(&g, g.constant(w.tensor().clone().reshape(Shape::new(1, 3, 8, 8)).unwrap()), &w).unwrap()), 0.0);
}

#[test]
fn nonmarked_averages_both_terms() {
    let a = batch(2, 8, 3);
    let b = batch(2, 8, 4);
    let wz = NoiseTarget::<f64>::generate(3, 8, 5).w_z;
    let g = Graph::new();
    let v = loss_nonmarked(&g, g.constant(a.clone()), g.constant(b.clone()), &wz).unwrap();
    let la: f64 = (0..2).map(|n| l1_scalar(a.sample(n), wz.data())).sum::<f64>() / 2.0;
    let lb: f64 = (0..2).map(|n| l1_scalar(b.sample(n), wz.data())).sum::<f64>() / 2.0;
    assert!((g.item(v) - 0.5 * (la + lb)).abs() < 1e-9);
}

#[test]
fn noise_target_is_seeded_uniform() {
    let a = NoiseTarget::<f64>::generate(3, 16, 9);
    let b = NoiseTarget::<f64>::generate(3, 16, 9);
    let c = NoiseTarget::<f64>::generate(3, 16, 10);
    assert_eq!(a, b);
    assert_ne!(a.w_z, c.w_z);
    assert!(a.w_z.data().iter().all(|v| (0.0..1.0).contains(v)));
}

#[test]
fn fidelity_matches_scalar_loop() {
    let a = batch(2, 8, 6);
    let b = batch(2, 8, 7);
    let g = Graph::new();
    let v = loss_fidelity(&g, g.constant(a.clone()), g.constant(b.clone())).unwrap();
    assert!((g.item(v) - l1_scalar(a.data(), b.data())).abs() < 1e-9);
    assert!(loss_fidelity(&g, g.constant(a), g.constant(batch(2, 4, 1))).is_err());
}

#[test]
fn adversarial_terms_match_scalar_loop() {
    let mut r = rng(11);
    let mut scores = |n| Tensor::<f64>::from_fn(Shape::new(n, 1, 6, 6), |_, _, _, _| r.random_range(0.01..0.99));
    let dt = scores(2);
    let df = scores(2);
    let g = Graph::new();
    let (d, gen) = loss_adversarial(&g, g.constant(dt.clone()), g.constant(df.clone()));
    let want_d = 0.5 * (mean_ln(dt.data(), false) + mean_ln(df.data(), true));
    let want_g = -mean_ln(df.data(), false);
    assert!((g.item(d) - want_d).abs() < 1e-9);
    assert!((g.item(gen) - want_g).abs() < 1e-9);
    assert!(g.item(d) <= 0.0);
}

#[test]
fn adversarial_clamps_saturated_scores() {
    let g = Graph::new();
    let ones = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
    let zeros = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 0.0));
    let v = loss_adversarial_g(&g, zeros);
    assert!((g.item(v) - (-(1e-7f64).ln())).abs() < 1e-9);
    let (d, _) = loss_adversarial(&g, ones, zeros);
    assert!(g.item(d).is_finite());
}

#[test]
fn composite_weights_terms() {
    let w = LossWeights {
        alpha: 0.5,
        beta1: 2.0,
        beta2: 0.25,
        beta3: 0.001,
    };
    let g = Graph::new();
    let c = |v: f64| g.constant(Tensor::scalar(v));
    let parts = CompositeParts {
        mark: c(0.3),
        nonmarked: c(0.2),
        fidelity: c(0.1),
        perceptual: c(0.4),
        adversarial: c(5.0),
    };
    let v = g.item(loss_composite(&g, &parts, &w));
    let want = 0.3 + 0.5 * 0.2 + 2.0 * 0.1 + 0.25 * 0.4 + 0.001 * 5.0;
    assert!((v - want).abs() < 1e-12);
    assert!((composite_value(0.3, 0.2, 0.1, 0.4, 5.0, &w) - want).abs() < 1e-12);
    assert!(LossWeights { alpha: -1.0, ..w }.validate().is_err());
    assert!(LossWeights { beta3: f64::NAN, ..w }.validate().is_err());
}

#[test]
fn perceptual_matches_feature_distances() {
    let vgg = Vgg19::<f64>::random(16, 3);
    let a = batch(1, 32, 20);
    let b = batch(1, 32, 21);
    let g = Graph::new();
    let bound = vgg.bind(&g);
    let v = loss_perceptual(&g, &vgg, &bound, g.constant(a.clone()), g.constant(b.clone())).unwrap();
    let fa = vgg.features(&g, &bound, g.constant(a.clone()));
    let fb = vgg.features(&g, &bound, g.constant(b));
    assert_eq!(fa.len(), 5);
    let want: f64 = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| l1_scalar(g.value(*x).data(), g.value(*y).data()))
        .sum::<f64>()
        / 5.0;
    assert!((g.item(v) - want).abs() < 1e-9);
    let same = loss_perceptual(&g, &vgg, &bound, g.constant(a.clone()), g.constant(a)).unwrap();
    assert_eq!(g.item(same), 0.0);
}

#[test]
fn perceptual_gradient_reaches_marked_only() {
    let vgg = Vgg19::<f64>::random(16, 4);
    let g = Graph::new();
    let bound = vgg.bind(&g);
    let host = g.leaf(Arc::new(batch(1, 16, 1)), true);
    let marked = g.leaf(Arc::new(batch(1, 16, 2)), true);
    let v = loss_perceptual(&g, &vgg, &bound, host, marked).unwrap();
    let grads = g.backward(v);
    assert!(grads.get(host).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
    assert!(grads.get(marked).unwrap().data().iter().any(|&x| x != 0.0));
}

/// Central-difference check of d(loss)/d(input) for one input element.
fn numeric_grad(f: &dyn Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, i: usize) -> f64 {
    let h = 1e-6;
    let mut p = x.clone();
    p.data_mut()[i] += h;
    let mut m = x.clone();
    m.data_mut()[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

#[test]
fn fidelity_and_mark_gradients() {
    let target = random_image(3, 4, 8);
    let x = batch(2, 4, 9);
    let f = |t: &Tensor<f64>| {
        let g = Graph::new();
        let v = loss_mark_extract(&g, g.constant(t.clone()), &target).unwrap();
        g.item(v)
    };
    let g = Graph::new();
    let xv = g.leaf(Arc::new(x.clone()), true);
    let v = loss_mark_extract(&g, xv, &target).unwrap();
    let grads = g.backward(v);
    let gx = grads.get(xv).unwrap();
    for i in [0, 7, 31, 50, 95] {
        assert!((gx.data()[i] - numeric_grad(&f, &x, i)).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn l1_terms_nonnegative_and_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = batch(1, 4, s1);
        let b = batch(1, 4, s2);
        let g = Graph::new();
        let ab = g.item(loss_fidelity(&g, g.constant(a.clone()), g.constant(b.clone())).unwrap());
        let ba = g.item(loss_fidelity(&g, g.constant(b), g.constant(a)).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn discriminator_objective_nonpositive(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut scores = || Tensor::<f64>::from_fn(Shape::new(1, 1, 3, 3), |_, _, _, _| r.random::<f64>());
        let (dt, df) = (scores(), scores());
        let g = Graph::new();
        let (d, gen) = loss_adversarial(&g, g.constant(dt), g.constant(df));
        prop_assert!(g.item(d) <= 0.0);
        prop_assert!(g.item(gen) >= 0.0);
    }

    #[test]
    fn mark_loss_bounded_by_one(seed in any::<u64>()) {
        let w = random_image(3, 4, seed);
        let x = ImageArray::<f64>::from_fn(3, 4, 4, |c, y, xx| 1.0 - w.get(c, y, xx));
        let g = Graph::new();
        let t = g.constant(x.tensor().clone().reshape(Shape::new(1, 3, 4, 4)).unwrap());
        let v = g.item(loss_mark_extract(&g, t, &w).unwrap());
        prop_assert!((0.0..=1.0).contains(&v));
    }
}
