//! Training loops: the baseline host, the joint E/D/R stage, the
//! adversarial fine-tuning of R, and attacker-side surrogates.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{apply_graph, sample_attack, AttackSpec};
use crate::error::{ensure, Error, Result};
use crate::image_array::ImageArray;
use crate::losses::{
    loss_adversarial_d, loss_adversarial_g, loss_composite, loss_fidelity, loss_mark_extract, loss_nonmarked,
    loss_perceptual, loss_surrogate_extract, loss_surrogate_fit, CompositeParts, NoiseTarget,
};
use crate::metrics::{ber, psnr, Thresholds, WatermarkKind};
use crate::models::{
    build_discriminator, build_embedder, build_extractor, build_host, build_surrogate, NetworkHandle, SurrogateKind,
    Vgg19,
};
use crate::nn::{Adam, Bound, Ctx, Graph, Var};
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::config::{RunConfig, SurrogateLoss};
use crate::pipeline::data::{generate_watermark, load_watermark, stack_indices, PairedDataset};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Samples per evaluation-mode forward call.
pub const INFER_CHUNK: usize = 16;
/// Per-sample PSNR cap used when averaging, so identical images keep the
/// mean finite.
pub const PSNR_AVERAGE_CAP: f64 = 100.0;

/// Offsets of each network's initialization seed from `seeds.init`.
mod init_offset {
    pub const EMBEDDER: u64 = 0;
    pub const EXTRACTOR: u64 = 1;
    pub const DISCRIMINATOR: u64 = 2;
    pub const N1: u64 = 3;
    pub const N2: u64 = 4;
    pub const HOST: u64 = 5;
    pub const VGG: u64 = 6;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Host,
    Initial,
    Adversarial,
    Surrogate,
}

impl Stage {
    fn stream(self) -> u64 {
        match self {
            Stage::Host => 1,
            Stage::Initial => 2,
            Stage::Adversarial => 3,
            Stage::Surrogate => 4,
        }
    }
}

/// Watermark `w`, its kind, and the noise target `w_z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Watermarks<T> {
    pub kind: WatermarkKind,
    pub w: ImageArray<T>,
    pub noise: NoiseTarget<T>,
}

impl<T: Scalar> Watermarks<T> {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let side = cfg.image_side;
        let kind = cfg.watermark.kind;
        let w = match &cfg.watermark.image {
            Some(path) => load_watermark(path, kind, side)?,
            None => generate_watermark(kind, side, cfg.seeds.watermark)?,
        };
        Ok(Watermarks {
            kind,
            w,
            noise: NoiseTarget::generate(3, side, cfg.seeds.noise_target),
        })
    }
}

/// Validation summary of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Validation {
    /// Mean watermark PSNR, each sample capped at [`PSNR_AVERAGE_CAP`].
    pub psnr_w: f64,
    pub ber: f64,
    pub sr: f64,
    /// Mean marked-vs-host PSNR, capped likewise.
    pub psnr_marked: f64,
}

impl Validation {
    /// Selection order: PSNR for color marks; BER, then PSNR, for binary.
    pub fn better_than(&self, other: &Validation, kind: WatermarkKind) -> bool {
        match kind {
            WatermarkKind::Color => self.psnr_w > other.psnr_w,
            WatermarkKind::Binary => self.ber < other.ber || (self.ber == other.ber && self.psnr_w > other.psnr_w),
        }
    }
}

/// One epoch of a loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub steps: usize,
    /// Per-step means of each loss term.
    pub losses: BTreeMap<String, f64>,
    pub validation: Option<Validation>,
}

#[derive(Default)]
struct Means {
    sums: BTreeMap<&'static str, (f64, usize)>,
}

impl Means {
    fn add(&mut self, name: &'static str, v: f64) {
        let e = self.sums.entry(name).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }

    fn finish(self) -> BTreeMap<String, f64> {
        self.sums
            .into_iter()
            .map(|(k, (s, n))| (k.to_string(), s / n as f64))
            .collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn seed_for(cfg: &RunConfig, offset: u64) -> u64 {
    cfg.seeds.init.wrapping_add(offset)
}

fn clip_psnr(v: f64) -> f64 {
    v.min(PSNR_AVERAGE_CAP)
}

fn guard(value: f64, what: &str, stage: Stage, epoch: usize, step: usize) -> Result<()> {
    ensure(value.is_finite(), || {
        Error::Diverged(format!("{what} is {value} ({stage:?} stage, epoch {epoch}, step {step})"))
    })
}

fn zero<T: Scalar>(g: &Graph<T>) -> Var {
    g.constant(Tensor::scalar(T::zero()))
}

/// Perceptual network from the config; the environment variable wins.
pub fn load_vgg<T: Scalar>(cfg: &RunConfig) -> Result<Vgg19<T>> {
    Vgg19::from_env_or_random(cfg.vgg.weights.as_deref(), cfg.vgg.width_divisor, seed_for(cfg, init_offset::VGG))
}

/// Shuffled mini-batches of `0..n`.
fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Marks, extracts and scores a set of host outputs in evaluation mode.
pub fn validate_marking<T: Scalar>(
    embedder: &NetworkHandle<T>,
    extractor: &NetworkHandle<T>,
    host_outputs: &[ImageArray<T>],
    wm: &Watermarks<T>,
    thresholds: &Thresholds,
) -> Result<Validation> {
    ensure(!host_outputs.is_empty(), || Error::InsufficientData("empty validation set".into()))?;
    let marked = embedder.infer_images(host_outputs, INFER_CHUNK)?;
    let extracted = extractor.infer_images(&marked, INFER_CHUNK)?;
    let n = host_outputs.len() as f64;
    let (mut p, mut b, mut pm, mut ok) = (0.0, 0.0, 0.0, 0usize);
    for ((e, m), h) in extracted.iter().zip(&marked).zip(host_outputs) {
        let pw = psnr(e, &wm.w)?;
        let bw = ber(e, &wm.w)?;
        let value = match wm.kind {
            WatermarkKind::Color => pw,
            WatermarkKind::Binary => bw,
        };
        ok += crate::metrics::is_success(wm.kind, value, thresholds) as usize;
        p += clip_psnr(pw);
        b += bw;
        pm += clip_psnr(psnr(m, h)?);
    }
    Ok(Validation {
        psnr_w: p / n,
        ber: b / n,
        sr: ok as f64 / n,
        psnr_marked: pm / n,
    })
}

fn adam_step<T: Scalar>(
    adam: &mut Adam<T>,
    net: &mut NetworkHandle<T>,
    bound: &Bound<T>,
    grads: &crate::nn::Gradients<T>,
) {
    adam.step(&mut net.store, bound, grads);
    net.store.apply_updates(bound);
}

/// Phase I baseline: a U-net host fitted with per-pixel L1.
pub fn train_host<T: Scalar>(cfg: &RunConfig, data: &PairedDataset<T>) -> Result<(NetworkHandle<T>, Vec<EpochRecord>)> {
    cfg.validate()?;
    ensure(!data.is_empty(), || Error::InsufficientData("empty host training set".into()))?;
    let mut host = build_host::<T>(&cfg.networks.host, seed_for(cfg, init_offset::HOST))?;
    let mut adam = Adam::new(cfg.optimizer);
    let stage = Stage::Host;
    let mut order_rng = stream_rng(cfg.seeds.train, stage.stream());
    let mut ctx = Ctx::train(stream_rng(cfg.seeds.train, 100 + stage.stream()));
    let mut history = Vec::new();
    for epoch in 1..=cfg.schedule.epochs_host {
        let mut means = Means::default();
        let plan = batches(data.len(), cfg.schedule.batch_host, &mut order_rng);
        for (step, idx) in plan.iter().enumerate() {
            let g = Graph::new();
            let b = host.store.bind(&g, true);
            let x = g.constant(stack_indices(&data.inputs, idx)?);
            let y = g.constant(stack_indices(&data.targets, idx)?);
            let out = host.forward(&g, &b, x, &mut ctx);
            let loss = g.l1_loss(out, y);
            let v = g.item(loss).as_f64();
            guard(v, "host L1 loss", stage, epoch, step)?;
            means.add("l1", v);
            let grads = g.backward(loss);
            adam_step(&mut adam, &mut host, &b, &grads);
        }
        history.push(EpochRecord {
            stage,
            epoch,
            steps: plan.len(),
            losses: means.finish(),
            validation: None,
        });
    }
    Ok((host, history))
}

struct MarkingNets<T> {
    embedder: NetworkHandle<T>,
    extractor: NetworkHandle<T>,
    discriminator: NetworkHandle<T>,
}

/// Joint training of E, D and R from scratch against a frozen host.
/// The checkpoint keeps the weights of the best validation epoch; epoch 0
/// of the history scores the untrained networks.
pub fn train_initial<T: Scalar>(
    cfg: &RunConfig,
    host: &NetworkHandle<T>,
    train: &PairedDataset<T>,
    val: &PairedDataset<T>,
) -> Result<Checkpoint<T>> {
    cfg.validate()?;
    ensure(!train.is_empty(), || Error::InsufficientData("empty training set".into()))?;
    let wm = Watermarks::<T>::from_config(cfg)?;
    let vgg = load_vgg::<T>(cfg)?;
    let mut nets = MarkingNets {
        embedder: build_embedder::<T>(&cfg.networks.embedder, seed_for(cfg, init_offset::EMBEDDER))?,
        extractor: build_extractor::<T>(&cfg.networks.extractor, seed_for(cfg, init_offset::EXTRACTOR))?,
        discriminator: build_discriminator::<T>(&cfg.networks.discriminator, seed_for(cfg, init_offset::DISCRIMINATOR))?,
    };
    let host_train = host.infer_images(&train.inputs, INFER_CHUNK)?;
    let host_val = host.infer_images(&val.inputs, INFER_CHUNK)?;

    let stage = Stage::Initial;
    let (mut adam_e, mut adam_r, mut adam_d) =
        (Adam::new(cfg.optimizer), Adam::new(cfg.optimizer), Adam::new(cfg.optimizer));
    let mut order_rng = stream_rng(cfg.seeds.train, stage.stream());
    let mut attack_rng = stream_rng(cfg.seeds.attack, stage.stream());
    let mut ctx = Ctx::train(stream_rng(cfg.seeds.train, 100 + stage.stream()));

    let first = validate_marking(&nets.embedder, &nets.extractor, &host_val, &wm, &cfg.thresholds)?;
    let mut history = vec![EpochRecord {
        stage,
        epoch: 0,
        steps: 0,
        losses: BTreeMap::new(),
        validation: Some(first),
    }];
    let mut best = (
        first,
        0usize,
        nets.embedder.store.clone(),
        nets.extractor.store.clone(),
        nets.discriminator.store.clone(),
    );

    for epoch in 1..=cfg.schedule.epochs_initial {
        let attacks_on = cfg.attack_layer.enabled && epoch > cfg.attack_layer.warmup_epochs;
        let mut means = Means::default();
        let plan = batches(train.len(), cfg.schedule.batch_initial, &mut order_rng);
        for (step, idx) in plan.iter().enumerate() {
            let spec = if attacks_on {
                sample_attack(&mut attack_rng, &cfg.attack_layer.ranges)
            } else {
                AttackSpec::Identity
            };
            let x = stack_indices(&train.inputs, idx)?;
            let yh = stack_indices(&host_train, idx)?;
            let n = idx.len();

            let g = Graph::new();
            let be = nets.embedder.store.bind(&g, true);
            let br = nets.extractor.store.bind(&g, true);
            let bd = nets.discriminator.store.bind(&g, false);
            let xv = g.constant(x);
            let hv = g.constant(yh.clone());
            let marked = nets.embedder.forward(&g, &be, hv, &mut ctx);
            let attacked = apply_graph(&g, marked, &spec)?;
            let r_in = g.concat_batch(&[attacked, xv, hv]);
            let r_out = nets.extractor.forward(&g, &br, r_in, &mut ctx);
            let mark = loss_mark_extract(&g, g.slice_batch(r_out, 0, n), &wm.w)?;
            let nonmarked = loss_nonmarked(&g, g.slice_batch(r_out, n, n), g.slice_batch(r_out, 2 * n, n), &wm.noise.w_z)?;
            let fidelity = loss_fidelity(&g, hv, marked)?;
            let perceptual = if cfg.weights.beta2 > 0.0 {
                let bv = vgg.bind(&g);
                loss_perceptual(&g, &vgg, &bv, hv, marked)?
            } else {
                zero(&g)
            };
            let pair = g.concat_channels(&[hv, marked]);
            let d_false = nets.discriminator.forward(&g, &bd, pair, &mut ctx);
            let adversarial = loss_adversarial_g(&g, d_false);
            let parts = CompositeParts {
                mark,
                nonmarked,
                fidelity,
                perceptual,
                adversarial,
            };
            let total = loss_composite(&g, &parts, &cfg.weights);
            let tv = g.item(total).as_f64();
            guard(tv, "composite loss", stage, epoch, step)?;
            for (name, v) in [
                ("mark", mark),
                ("nonmarked", nonmarked),
                ("fidelity", fidelity),
                ("perceptual", perceptual),
                ("adversarial_g", adversarial),
            ] {
                means.add(name, g.item(v).as_f64());
            }
            means.add("composite", tv);
            let marked_value = (*g.value(marked)).clone();

            // Discriminator: ascend the true/false objective.
            let gd = Graph::new();
            let bd = nets.discriminator.store.bind(&gd, true);
            let hd = gd.constant(yh);
            let md = gd.constant(marked_value);
            let pairs = gd.concat_batch(&[gd.concat_channels(&[hd, hd]), gd.concat_channels(&[hd, md])]);
            let scores = nets.discriminator.forward(&gd, &bd, pairs, &mut ctx);
            let d_loss = loss_adversarial_d(&gd, gd.slice_batch(scores, 0, n), gd.slice_batch(scores, n, n));
            let dv = gd.item(d_loss).as_f64();
            guard(dv, "discriminator loss", stage, epoch, step)?;
            means.add("d_loss", dv);
            let objective = gd.affine(d_loss, -T::one(), T::zero());
            let d_grads = gd.backward(objective);
            adam_step(&mut adam_d, &mut nets.discriminator, &bd, &d_grads);

            let grads = g.backward(total);
            adam_step(&mut adam_e, &mut nets.embedder, &be, &grads);
            adam_step(&mut adam_r, &mut nets.extractor, &br, &grads);
        }
        let v = validate_marking(&nets.embedder, &nets.extractor, &host_val, &wm, &cfg.thresholds)?;
        if v.better_than(&best.0, wm.kind) {
            best = (
                v,
                epoch,
                nets.embedder.store.clone(),
                nets.extractor.store.clone(),
                nets.discriminator.store.clone(),
            );
        }
        history.push(EpochRecord {
            stage,
            epoch,
            steps: plan.len(),
            losses: means.finish(),
            validation: Some(v),
        });
    }

    nets.embedder.store = best.2;
    nets.extractor.store = best.3;
    nets.discriminator.store = best.4;
    Ok(Checkpoint {
        config: cfg.clone(),
        stage,
        epoch: best.1,
        history,
        host: host.clone(),
        embedder: nets.embedder,
        extractor: nets.extractor,
        discriminator: nets.discriminator,
        defender_surrogates: None,
        watermarks: wm,
    })
}

/// Adversarial stage: trains the defender's surrogates N1 (towards marked
/// outputs) and N2 (towards host outputs) and fine-tunes R so that it reads
/// `w` from N1 and `w_z` from N2. Each R step also replays the marked and
/// non-marked objectives of the initial stage. E and D are left untouched.
pub fn train_adversarial<T: Scalar>(
    ckpt: &Checkpoint<T>,
    train: &PairedDataset<T>,
    val: &PairedDataset<T>,
) -> Result<Checkpoint<T>> {
    let cfg = &ckpt.config;
    ensure(!train.is_empty(), || Error::InsufficientData("empty training set".into()))?;
    let wm = &ckpt.watermarks;
    let (mut n1, mut n2) = match &ckpt.defender_surrogates {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (
            build_surrogate::<T>(SurrogateKind::Unet, &cfg.networks.surrogate, seed_for(cfg, init_offset::N1))?,
            build_surrogate::<T>(SurrogateKind::Unet, &cfg.networks.surrogate, seed_for(cfg, init_offset::N2))?,
        ),
    };
    let mut extractor = ckpt.extractor.clone();
    let host_train = ckpt.host.infer_images(&train.inputs, INFER_CHUNK)?;
    let marked_train = ckpt.embedder.infer_images(&host_train, INFER_CHUNK)?;
    let host_val = ckpt.host.infer_images(&val.inputs, INFER_CHUNK)?;

    let stage = Stage::Adversarial;
    let (mut adam_1, mut adam_2, mut adam_r) =
        (Adam::new(cfg.optimizer), Adam::new(cfg.optimizer), Adam::new(cfg.optimizer));
    let mut order_rng = stream_rng(cfg.seeds.train, stage.stream());
    let mut attack_rng = stream_rng(cfg.seeds.attack, stage.stream());
    let mut ctx = Ctx::train(stream_rng(cfg.seeds.train, 100 + stage.stream()));
    let mut history = ckpt.history.clone();

    for epoch in 1..=cfg.schedule.epochs_adversarial {
        let mut means = Means::default();
        let plan = batches(train.len(), cfg.schedule.batch_adversarial, &mut order_rng);
        for (step, idx) in plan.iter().enumerate() {
            let n = idx.len();
            let x = stack_indices(&train.inputs, idx)?;
            let yh = stack_indices(&host_train, idx)?;
            let ym = stack_indices(&marked_train, idx)?;

            let mut fit = |net: &mut NetworkHandle<T>, adam: &mut Adam<T>, target: &Tensor<T>, name: &'static str| {
                let g = Graph::new();
                let b = net.store.bind(&g, true);
                let out = net.forward(&g, &b, g.constant(x.clone()), &mut ctx);
                let loss = loss_surrogate_fit(&g, out, g.constant(target.clone()))?;
                let v = g.item(loss).as_f64();
                guard(v, name, stage, epoch, step)?;
                means.add(name, v);
                let out_value = (*g.value(out)).clone();
                let grads = g.backward(loss);
                adam_step(adam, net, &b, &grads);
                Ok::<_, Error>(out_value)
            };
            let n1_out = fit(&mut n1, &mut adam_1, &ym, "n1_fit")?;
            let n2_out = fit(&mut n2, &mut adam_2, &yh, "n2_fit")?;

            let spec = if cfg.attack_layer.enabled {
                sample_attack(&mut attack_rng, &cfg.attack_layer.ranges)
            } else {
                AttackSpec::Identity
            };
            let g = Graph::new();
            let br = extractor.store.bind(&g, true);
            let attacked = apply_graph(&g, g.constant(ym), &spec)?;
            let r_in = g.concat_batch(&[g.constant(n1_out), g.constant(n2_out), attacked, g.constant(x), g.constant(yh)]);
            let r_out = extractor.forward(&g, &br, r_in, &mut ctx);
            let (l9, l10) = loss_surrogate_extract(&g, g.slice_batch(r_out, 0, n), &wm.w, g.slice_batch(r_out, n, n), &wm.noise.w_z)?;
            let l1 = loss_mark_extract(&g, g.slice_batch(r_out, 2 * n, n), &wm.w)?;
            let l2 = loss_nonmarked(&g, g.slice_batch(r_out, 3 * n, n), g.slice_batch(r_out, 4 * n, n), &wm.noise.w_z)?;
            let one = T::one();
            let total = g.weighted_sum(&[(one, l9), (one, l10), (one, l1), (T::lit(cfg.weights.alpha), l2)]);
            let tv = g.item(total).as_f64();
            guard(tv, "fine-tuning loss", stage, epoch, step)?;
            for (name, v) in [("surrogate_mark", l9), ("surrogate_nonmarked", l10), ("mark", l1), ("nonmarked", l2)] {
                means.add(name, g.item(v).as_f64());
            }
            means.add("total", tv);
            let grads = g.backward(total);
            adam_step(&mut adam_r, &mut extractor, &br, &grads);
        }
        let v = validate_marking(&ckpt.embedder, &extractor, &host_val, wm, &cfg.thresholds)?;
        history.push(EpochRecord {
            stage,
            epoch,
            steps: plan.len(),
            losses: means.finish(),
            validation: Some(v),
        });
    }

    Ok(Checkpoint {
        config: cfg.clone(),
        stage,
        epoch: cfg.schedule.epochs_adversarial,
        history,
        host: ckpt.host.clone(),
        embedder: ckpt.embedder.clone(),
        extractor,
        discriminator: ckpt.discriminator.clone(),
        defender_surrogates: Some((n1, n2)),
        watermarks: wm.clone(),
    })
}

/// Attacker query set: each input paired with the marked model output
/// `E(H(x))`.
pub fn marked_pairs<T: Scalar>(ckpt: &Checkpoint<T>, inputs: &[ImageArray<T>]) -> Result<PairedDataset<T>> {
    let host_out = ckpt.host.infer_images(inputs, INFER_CHUNK)?;
    let marked = ckpt.embedder.infer_images(&host_out, INFER_CHUNK)?;
    PairedDataset::new(inputs.to_vec(), marked)
}

/// Trains an attacker surrogate on `(input, target)` pairs. Term weights:
/// 1 for `l1` and `l2`, `beta2` for `perceptual`, `beta3` for
/// `adversarial` (the latter against a fresh conditional PatchGAN).
pub fn train_surrogate<T: Scalar>(
    cfg: &RunConfig,
    kind: SurrogateKind,
    losses: &[SurrogateLoss],
    pairs: &PairedDataset<T>,
    seed: u64,
) -> Result<(NetworkHandle<T>, Vec<EpochRecord>)> {
    ensure(!losses.is_empty(), || Error::Argument("surrogate loss menu is empty".into()))?;
    for (i, l) in losses.iter().enumerate() {
        ensure(!losses[..i].contains(l), || Error::Argument(format!("duplicate surrogate loss {l:?}")))?;
    }
    ensure(!pairs.is_empty(), || Error::InsufficientData("empty surrogate training set".into()))?;
    let mut net = build_surrogate::<T>(kind, &cfg.networks.surrogate, seed)?;
    let use_adv = losses.contains(&SurrogateLoss::Adversarial);
    let use_per = losses.contains(&SurrogateLoss::Perceptual);
    let mut disc = if use_adv {
        Some(build_discriminator::<T>(&cfg.networks.discriminator, seed.wrapping_add(1))?)
    } else {
        None
    };
    let vgg = if use_per { Some(load_vgg::<T>(cfg)?) } else { None };
    let (mut adam, mut adam_d) = (Adam::new(cfg.optimizer), Adam::new(cfg.optimizer));
    let stage = Stage::Surrogate;
    let mut order_rng = stream_rng(seed, stage.stream());
    let mut ctx = Ctx::train(stream_rng(seed, 100 + stage.stream()));
    let mut history = Vec::new();

    for epoch in 1..=cfg.schedule.epochs_surrogate {
        let mut means = Means::default();
        let plan = batches(pairs.len(), cfg.schedule.batch_surrogate, &mut order_rng);
        for (step, idx) in plan.iter().enumerate() {
            let n = idx.len();
            let x = stack_indices(&pairs.inputs, idx)?;
            let y = stack_indices(&pairs.targets, idx)?;
            let g = Graph::new();
            let b = net.store.bind(&g, true);
            let xv = g.constant(x.clone());
            let yv = g.constant(y.clone());
            let out = net.forward(&g, &b, xv, &mut ctx);
            let mut terms = Vec::new();
            for l in losses {
                let (name, w, v) = match l {
                    SurrogateLoss::L1 => ("l1", 1.0, loss_surrogate_fit(&g, out, yv)?),
                    SurrogateLoss::L2 => ("l2", 1.0, g.mse_loss(out, yv)),
                    SurrogateLoss::Perceptual => {
                        let vgg = vgg.as_ref().expect("loaded");
                        let bv = vgg.bind(&g);
                        ("perceptual", cfg.weights.beta2, loss_perceptual(&g, vgg, &bv, yv, out)?)
                    }
                    SurrogateLoss::Adversarial => {
                        let d = disc.as_ref().expect("built");
                        let bd = d.store.bind(&g, false);
                        let scores = d.forward(&g, &bd, g.concat_channels(&[xv, out]), &mut ctx);
                        ("adversarial_g", cfg.weights.beta3, loss_adversarial_g(&g, scores))
                    }
                };
                means.add(name, g.item(v).as_f64());
                terms.push((T::lit(w), v));
            }
            let total = g.weighted_sum(&terms);
            let tv = g.item(total).as_f64();
            guard(tv, "surrogate loss", stage, epoch, step)?;
            means.add("total", tv);
            let out_value = (*g.value(out)).clone();
            let grads = g.backward(total);
            adam_step(&mut adam, &mut net, &b, &grads);

            if let Some(d) = disc.as_mut() {
                let gd = Graph::new();
                let bd = d.store.bind(&gd, true);
                let xd = gd.constant(x);
                let pairs_in = gd.concat_batch(&[
                    gd.concat_channels(&[xd, gd.constant(y)]),
                    gd.concat_channels(&[xd, gd.constant(out_value)]),
                ]);
                let scores = d.forward(&gd, &bd, pairs_in, &mut ctx);
                let d_loss = loss_adversarial_d(&gd, gd.slice_batch(scores, 0, n), gd.slice_batch(scores, n, n));
                let dv = gd.item(d_loss).as_f64();
                guard(dv, "surrogate discriminator loss", stage, epoch, step)?;
                means.add("d_loss", dv);
                let grads = gd.backward(gd.affine(d_loss, -T::one(), T::zero()));
                adam_step(&mut adam_d, d, &bd, &grads);
            }
        }
        history.push(EpochRecord {
            stage,
            epoch,
            steps: plan.len(),
            losses: means.finish(),
            validation: None,
        });
    }
    Ok((net, history))
}
