mod common;

use std::sync::Arc;

use aawm::models::{
    audit_anti_aliased, build_embedder, build_extractor, build_surrogate, embed, extract, host_generate,
    identity_host, LayerTag, NetworkConfig, Sampling, SurrogateKind,
};
use aawm::nn::{Ctx, Graph, ParamKind};
use aawm::spectral::image_hf_energy_ratio;
use aawm::{ImageArray, Shape, Tensor};
use common::{random_image, rng, texture};
use rand::Rng;

fn tiny() -> NetworkConfig {
    NetworkConfig {
        image_side: 8,
        base_channels: 3,
        depth: 3,
        dropout_rate: 0.5,
        skips: true,
        sampling: Sampling::AntiAliased,
        res_blocks: 1,
    }
}

#[test]
fn embedder_parameter_gradients_match_finite_differences() {
    let mut net = build_embedder::<f64>(&tiny(), 7).unwrap();
    let x = Tensor::uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng(1));
    let y = Tensor::uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng(2));
    let eps = 1e-3;

    let g = Graph::new();
    let bound = net.store.bind(&g, true);
    let out = net.forward(&g, &bound, g.constant(x.clone()), &mut Ctx::eval());
    let loss = g.smooth_l1_loss(out, g.constant(y.clone()), eps);
    let grads = g.backward(loss);

    let trainable: Vec<_> = bound
        .vars()
        .filter(|(id, _)| net.store.params()[id.index()].kind == ParamKind::Trainable)
        .collect();
    let mut r = rng(3);
    let (mut checked, mut kinks, mut nonzero) = (0, 0, 0);
    let mut worst = 0.0f64;
    while checked < 100 {
        let (id, var) = trainable[r.random_range(0..trainable.len())];
        let k = r.random_range(0..net.store.get(id).len());
        let analytic = grads.get(var).map_or(0.0, |t| t.data()[k]);
        let h = 1e-6;
        let orig = net.store.get(id).data()[k];
        let mut eval_at = |v: f64| {
            net.store.get_mut(id).data_mut()[k] = v;
            let g = Graph::new();
            let b = net.store.bind(&g, false);
            let o = net.forward(&g, &b, g.constant(x.clone()), &mut Ctx::eval());
            g.item(g.smooth_l1_loss(o, g.constant(y.clone()), eps))
        };
        let (up, mid, down) = (eval_at(orig + h), eval_at(orig), eval_at(orig - h));
        net.store.get_mut(id).data_mut()[k] = orig;
        let (fwd, bwd) = ((up - mid) / h, (mid - down) / h);
        // A ReLU kink inside the stencil makes the one-sided slopes disagree.
        if (fwd - bwd).abs() > 0.01 * fwd.abs().max(bwd.abs()) + 1e-8 {
            kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic - numeric).abs() - 1e-9;
        let rel = err.max(0.0) / analytic.abs().max(numeric.abs()).max(1e-300);
        worst = worst.max(rel);
        nonzero += (analytic != 0.0) as usize;
        checked += 1;
    }
    assert!(kinks <= 10, "{kinks} samples straddled a kink");
    assert!(nonzero >= 50, "only {nonzero} nonzero gradients");
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn embedder_on_black_image_is_finite_and_bounded() {
    for sampling in [Sampling::AntiAliased, Sampling::Strided] {
        let e = build_embedder::<f32>(&NetworkConfig::toy(4).with_sampling(sampling), 3).unwrap();
        let y = embed(&e, &ImageArray::zeros(3, 64, 64)).unwrap();
        assert_eq!(y.dims(), (3, 64, 64));
        assert!(y.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}

#[test]
fn toy_encoder_reaches_one_pixel() {
    let e = build_embedder::<f32>(&NetworkConfig::toy(4), 0).unwrap();
    let mut side = 64;
    let mut trace = vec![side];
    for tag in e.layers() {
        if tag == (LayerTag::Blur { stride: 2 }) {
            side /= 2;
            trace.push(side);
        }
    }
    assert_eq!(trace, vec![64, 32, 16, 8, 4, 2, 1]);
}

#[test]
fn audit_separates_sampling_modes() {
    let cfg = NetworkConfig::toy(4);
    audit_anti_aliased(&build_embedder::<f32>(&cfg, 0).unwrap().layers()).unwrap();
    audit_anti_aliased(&build_extractor::<f32>(&cfg, 0).unwrap().layers()).unwrap();
    let strided = build_embedder::<f32>(&cfg.with_sampling(Sampling::Strided), 0).unwrap();
    assert!(audit_anti_aliased(&strided.layers()).is_err());
}

#[test]
fn surrogate_shapes_and_ranges() {
    let cfg = NetworkConfig::toy(4);
    let conv = build_surrogate::<f32>(SurrogateKind::Conv, &cfg, 0).unwrap();
    assert_eq!(conv.weight_layer_count(), 12);
    let unet = build_surrogate::<f32>(SurrogateKind::Unet, &cfg, 0).unwrap();
    assert_eq!(unet.parameter_count(), build_extractor::<f32>(&cfg, 0).unwrap().parameter_count());
    let img = texture(64, 2).cast::<f32>();
    for kind in [SurrogateKind::Conv, SurrogateKind::Res, SurrogateKind::Unet] {
        let net = build_surrogate::<f32>(kind, &cfg, 5).unwrap();
        let out = net.infer_images(std::slice::from_ref(&img), 1).unwrap();
        assert!(out[0].data().iter().all(|v| (0.0..=1.0).contains(v)), "{kind:?}");
    }
}

#[test]
fn identity_host_and_eval_determinism() {
    let h = identity_host::<f64>(16);
    let img = random_image(3, 16, 4);
    assert_eq!(host_generate(&h, &img).unwrap(), img);
    let r = build_extractor::<f64>(&NetworkConfig::toy(4), 9).unwrap();
    let x = texture(64, 1);
    assert_eq!(extract(&r, &x).unwrap(), extract(&r, &x).unwrap());
}

#[test]
fn train_mode_dropout_follows_rng() {
    use rand::SeedableRng;
    let e = build_embedder::<f64>(&NetworkConfig::toy(4), 2).unwrap();
    let x = Arc::new(texture(64, 3).tensor().clone().reshape(Shape::new(1, 3, 64, 64)).unwrap());
    let run = |seed: u64| {
        let g = Graph::new();
        let b = e.store.bind(&g, true);
        let out = e.forward(&g, &b, g.leaf(Arc::clone(&x), false), &mut Ctx::train(rand_chacha::ChaCha8Rng::seed_from_u64(seed)));
        g.value(out).clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn random_init_embedder_keeps_spectrum_near_input() {
    let cfg = NetworkConfig::toy(4);
    let (mut out_hf, mut in_hf) = (0.0, 0.0);
    for seed in 0..10 {
        let e = build_embedder::<f64>(&cfg, seed).unwrap();
        let x = texture(64, 100 + seed);
        in_hf += image_hf_energy_ratio(&x, 0.75).unwrap();
        out_hf += image_hf_energy_ratio(&embed(&e, &x).unwrap(), 0.75).unwrap();
    }
    assert!(out_hf <= 1.5 * in_hf, "{out_hf} vs {in_hf}");
}
