//! Training objectives recorded on a [`Graph`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image_array::ImageArray;
use crate::models::Vgg19;
use crate::nn::{Bound, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower/upper clamp margin for probabilities fed to `ln`.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta1: 1.0,
            beta2: 1.0,
            beta3: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
        ] {
            ensure(v.is_finite() && v >= 0.0, || {
                Error::Config(format!("loss weight {name} must be finite and nonnegative, got {v}"))
            })?;
        }
        Ok(())
    }
}

/// Fixed random image that the extractor must emit for non-marked inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTarget<T> {
    pub w_z: ImageArray<T>,
    pub seed: u64,
}

impl<T: Scalar> NoiseTarget<T> {
    /// Uniform i.i.d. pixels in [0, 1].
    pub fn generate(channels: usize, side: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_z = ImageArray::from_fn(channels, side, side, |_, _, _| T::lit(rng.random::<f64>()));
        NoiseTarget { w_z, seed }
    }
}

/// Repeats one image along the batch axis as a graph constant.
pub fn broadcast<T: Scalar>(g: &Graph<T>, image: &ImageArray<T>, n: usize) -> Var {
    let one = image.tensor();
    let parts: Vec<&Tensor<T>> = (0..n).map(|_| one).collect();
    g.constant(Tensor::cat_batch(&parts).expect("same shapes"))
}

fn check_same<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    ensure(sa == sb, || Error::Shape(format!("{what}: {sa:?} vs {sb:?}")))
}

/// Mean L1 between the extracted watermarks and `w`.
pub fn loss_mark_extract<T: Scalar>(g: &Graph<T>, extracted: Var, w: &ImageArray<T>) -> Result<Var> {
    let n = g.shape(extracted).n;
    let target = broadcast(g, w, n);
    check_same(g, extracted, target, "loss_mark_extract")?;
    Ok(g.l1_loss(extracted, target))
}

/// `(L1(R(x), w_z) + L1(R(H(x)), w_z)) / 2`.
pub fn loss_nonmarked<T: Scalar>(g: &Graph<T>, r_on_input: Var, r_on_host_output: Var, w_z: &ImageArray<T>) -> Result<Var> {
    let a = loss_mark_extract(g, r_on_input, w_z)?;
    let b = loss_mark_extract(g, r_on_host_output, w_z)?;
    Ok(g.weighted_sum(&[(T::lit(0.5), a), (T::lit(0.5), b)]))
}

pub fn loss_ext(l1: f64, l2: f64, alpha: f64) -> f64 {
    l1 + alpha * l2
}

/// Mean L1 between host outputs and marked images.
pub fn loss_fidelity<T: Scalar>(g: &Graph<T>, host_out: Var, marked: Var) -> Result<Var> {
    check_same(g, host_out, marked, "loss_fidelity")?;
    Ok(g.l1_loss(host_out, marked))
}

/// Mean over the five VGG stages of the L1 feature distance. The host side
/// is treated as a constant; gradients reach `marked` only.
pub fn loss_perceptual<T: Scalar>(
    g: &Graph<T>,
    vgg: &Vgg19<T>,
    vgg_bound: &Bound<T>,
    host_out: Var,
    marked: Var,
) -> Result<Var> {
    check_same(g, host_out, marked, "loss_perceptual")?;
    let fixed = g.detach(host_out);
    let fa = vgg.features(g, vgg_bound, fixed);
    let fb = vgg.features(g, vgg_bound, marked);
    let k = T::lit(1.0 / fa.len() as f64);
    let terms: Vec<(T, Var)> = fa.into_iter().zip(fb).map(|(a, b)| (k, g.l1_loss(b, a))).collect();
    Ok(g.weighted_sum(&terms))
}

/// Discriminator objective on a true pair `(H(x), H(x))` and a false pair
/// `(H(x), E(H(x)))`: `(mean ln D_true + mean ln(1 - D_false)) / 2`, which
/// is at most zero. D ascends it.
pub fn loss_adversarial_d<T: Scalar>(g: &Graph<T>, d_true: Var, d_false: Var) -> Var {
    let eps = T::lit(LOG_EPS);
    let a = g.mean_log(d_true, eps, false);
    let b = g.mean_log(d_false, eps, true);
    g.weighted_sum(&[(T::lit(0.5), a), (T::lit(0.5), b)])
}

/// Non-saturating generator term `-mean ln D(H(x), E(H(x)))`.
pub fn loss_adversarial_g<T: Scalar>(g: &Graph<T>, d_false: Var) -> Var {
    let l = g.mean_log(d_false, T::lit(LOG_EPS), false);
    g.affine(l, -T::one(), T::zero())
}

/// Both adversarial quantities from the two score maps.
pub fn loss_adversarial<T: Scalar>(g: &Graph<T>, d_true: Var, d_false: Var) -> (Var, Var) {
    (loss_adversarial_d(g, d_true, d_false), loss_adversarial_g(g, d_false))
}

/// Parts of the composite objective.
#[derive(Clone, Copy, Debug)]
pub struct CompositeParts {
    pub mark: Var,
    pub nonmarked: Var,
    pub fidelity: Var,
    pub perceptual: Var,
    pub adversarial: Var,
}

/// `L1 + alpha L2 + beta1 L3 + beta2 L4 + beta3 L5`.
pub fn loss_composite<T: Scalar>(g: &Graph<T>, parts: &CompositeParts, w: &LossWeights) -> Var {
    g.weighted_sum(&[
        (T::one(), parts.mark),
        (T::lit(w.alpha), parts.nonmarked),
        (T::lit(w.beta1), parts.fidelity),
        (T::lit(w.beta2), parts.perceptual),
        (T::lit(w.beta3), parts.adversarial),
    ])
}

/// Plain-number form of [`loss_composite`].
pub fn composite_value(l1: f64, l2: f64, l3: f64, l4: f64, l5: f64, w: &LossWeights) -> f64 {
    loss_ext(l1, l2, w.alpha) + w.beta1 * l3 + w.beta2 * l4 + w.beta3 * l5
}

/// Mean L1 of a surrogate output against its training target.
pub fn loss_surrogate_fit<T: Scalar>(g: &Graph<T>, n_out: Var, target: Var) -> Result<Var> {
    check_same(g, n_out, target, "loss_surrogate_fit")?;
    Ok(g.l1_loss(n_out, target))
}

/// `(L1(R(N1(x)), w), L1(R(N2(x)), w_z))`.
pub fn loss_surrogate_extract<T: Scalar>(
    g: &Graph<T>,
    r_on_n1: Var,
    w: &ImageArray<T>,
    r_on_n2: Var,
    w_z: &ImageArray<T>,
) -> Result<(Var, Var)> {
    Ok((loss_mark_extract(g, r_on_n1, w)?, loss_mark_extract(g, r_on_n2, w_z)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn img(v: f64) -> ImageArray<f64> {
        ImageArray::filled(3, 4, 4, v)
    }

    #[test]
    fn mark_extract_cases() {
        let g = Graph::new();
        let w = img(0.25);
        let same = broadcast(&g, &w, 2);
        assert_eq!(g.item(loss_mark_extract(&g, same, &w).unwrap()), 0.0);
        let off = broadcast(&g, &img(0.75), 2);
        assert!((g.item(loss_mark_extract(&g, off, &w).unwrap()) - 0.5).abs() < 1e-15);
        let bad = g.constant(Tensor::zeros(Shape::new(1, 3, 5, 5)));
        assert!(loss_mark_extract(&g, bad, &w).is_err());
    }

    #[test]
    fn nonmarked_half_factor() {
        let g = Graph::new();
        let wz = img(0.0);
        let a = broadcast(&g, &wz, 1);
        let b = broadcast(&g, &img(1.0), 1);
        assert!((g.item(loss_nonmarked(&g, a, b, &wz).unwrap()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ext_and_composite_plugins() {
        assert_eq!(loss_ext(0.0, 0.0, 1.0), 0.0);
        assert!((loss_ext(0.2, 0.3, 1.0) - 0.5).abs() < 1e-15);
        assert!((loss_ext(0.2, 0.3, 0.0) - 0.2).abs() < 1e-15);
        let w = LossWeights::default();
        // (1,1,1,1) for (L_ext, L3, L4, L5)
        assert!((composite_value(1.0, 0.0, 1.0, 1.0, 1.0, &w) - 3.001).abs() < 1e-12);
        let g = Graph::<f64>::new();
        let one = g.constant(Tensor::scalar(1.0));
        let zero = g.constant(Tensor::scalar(0.0));
        let parts = CompositeParts {
            mark: one,
            nonmarked: zero,
            fidelity: one,
            perceptual: one,
            adversarial: one,
        };
        assert!((g.item(loss_composite(&g, &parts, &w)) - 3.001).abs() < 1e-12);
        let no_adv = LossWeights { beta3: 0.0, ..w };
        assert!((g.item(loss_composite(&g, &parts, &no_adv)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_plugins() {
        let g = Graph::<f64>::new();
        let half = g.constant(Tensor::full(Shape::new(2, 1, 3, 3), 0.5));
        let (d, gt) = loss_adversarial(&g, half, half);
        assert!((g.item(d) - 0.5f64.ln()).abs() < 1e-12);
        assert!((g.item(gt) + 0.5f64.ln()).abs() < 1e-12);
        let ones = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let zeros = g.constant(Tensor::full(Shape::new(1, 1, 2, 2), 0.0));
        let d = g.item(loss_adversarial_d(&g, ones, zeros));
        assert!(d < 0.0 && d > -1e-6, "{d}");
    }

    #[test]
    fn noise_target_is_seeded() {
        let a = NoiseTarget::<f32>::generate(3, 8, 5);
        let b = NoiseTarget::<f32>::generate(3, 8, 5);
        assert_eq!(a, b);
        assert_ne!(a.w_z, NoiseTarget::<f32>::generate(3, 8, 6).w_z);
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            beta1: -1.0,
            ..LossWeights::default()
        }
        .validate()
        .is_err());
    }
}
