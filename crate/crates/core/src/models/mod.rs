//! Network layouts: embedder, extractor, discriminator, hosts and surrogates.

mod discriminator;
mod extractor;
mod surrogate;
mod unet;
pub mod vgg;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image_array::ImageArray;
use crate::nn::{Bound, Ctx, Graph, ParamStore, Var};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use discriminator::PatchGan;
use extractor::Extractor;
use surrogate::{ConvGen, ResGen};
use unet::{HeadKind, UnetCore, UnetSpec};

pub use vgg::Vgg19;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Embedder,
    Extractor,
    Discriminator,
    Host,
    IdentityHost,
    SurrogateConv,
    SurrogateRes,
    SurrogateUnet,
}

impl NetworkKind {
    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::Embedder => "embedder",
            NetworkKind::Extractor => "extractor",
            NetworkKind::Discriminator => "discriminator",
            NetworkKind::Host => "host",
            NetworkKind::IdentityHost => "identity-host",
            NetworkKind::SurrogateConv => "surrogate-conv",
            NetworkKind::SurrogateRes => "surrogate-res",
            NetworkKind::SurrogateUnet => "surrogate-unet",
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Attacker surrogate architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Conv,
    Res,
    Unet,
}

impl SurrogateKind {
    pub fn network_kind(self) -> NetworkKind {
        match self {
            SurrogateKind::Conv => NetworkKind::SurrogateConv,
            SurrogateKind::Res => NetworkKind::SurrogateRes,
            SurrogateKind::Unet => NetworkKind::SurrogateUnet,
        }
    }
}

impl FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(SurrogateKind::Conv),
            "res" => Ok(SurrogateKind::Res),
            "unet" => Ok(SurrogateKind::Unet),
            other => Err(Error::Argument(format!("unknown surrogate kind {other:?} (expected conv, res or unet)"))),
        }
    }
}

/// How feature maps change resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Stride-1 conv plus binomial blur at stride 2 going down; nearest
    /// replication plus conv going up; blurred transpose-conv output layer.
    AntiAliased,
    /// Stride-2 convolutions down and transposed convolutions up.
    Strided,
}

/// Shape and width settings shared by every builder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub image_side: usize,
    pub base_channels: usize,
    /// Encoder stages of the embedder; the extractor backbone uses one less.
    pub depth: usize,
    /// Applied on the first two decoder stages only.
    pub dropout_rate: f64,
    pub skips: bool,
    pub sampling: Sampling,
    /// Residual blocks of the ResNet surrogate.
    pub res_blocks: usize,
}

/// Embedder settings are the shared network settings.
pub type EmbedderConfig = NetworkConfig;

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            image_side: 256,
            base_channels: 64,
            depth: 8,
            dropout_rate: 0.5,
            skips: true,
            sampling: Sampling::AntiAliased,
            res_blocks: 9,
        }
    }
}

impl NetworkConfig {
    /// 64x64 inputs, six stages down to 1x1.
    pub fn toy(base_channels: usize) -> Self {
        NetworkConfig {
            image_side: 64,
            base_channels,
            depth: 6,
            res_blocks: 3,
            ..Self::default()
        }
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.depth >= 2, || Error::Config(format!("depth must be at least 2, got {}", self.depth)))?;
        ensure(self.depth < usize::BITS as usize, || Error::Config("depth too large".into()))?;
        ensure(self.base_channels >= 1, || Error::Config("base_channels must be positive".into()))?;
        ensure(self.image_side % (1usize << self.depth) == 0 && self.image_side > 0, || {
            Error::Config(format!(
                "image_side {} is not divisible by 2^{}",
                self.image_side, self.depth
            ))
        })?;
        ensure((0.0..1.0).contains(&self.dropout_rate), || {
            Error::Config(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate))
        })?;
        Ok(())
    }
}

/// One entry of a network's layer sequence, used for structural audits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerTag {
    Conv { kernel: usize, stride: usize },
    ConvTranspose { kernel: usize, stride: usize },
    /// Fixed depth-wise binomial blur.
    Blur { stride: usize },
    NearestUp,
    BatchNorm,
    Dropout,
    LeakyRelu,
    Relu,
    Sigmoid,
    /// `(tanh + 1) / 2`.
    Tanh01,
    Concat,
    ResidualAdd,
    MaxPool,
}

#[derive(Clone, Debug)]
enum Arch {
    Unet(UnetCore),
    Extractor(Extractor),
    PatchGan(PatchGan),
    ConvGen(ConvGen),
    ResGen(ResGen),
    Identity,
}

/// A built network: its layout, configuration and parameters.
#[derive(Clone, Debug)]
pub struct NetworkHandle<T> {
    pub kind: NetworkKind,
    pub config: NetworkConfig,
    pub store: ParamStore<T>,
    arch: Arch,
}

fn unet_spec(cfg: &NetworkConfig, head: HeadKind) -> UnetSpec {
    UnetSpec {
        in_channels: 3,
        out_channels: 3,
        base: cfg.base_channels,
        depth: cfg.depth,
        dropout: cfg.dropout_rate,
        skips: cfg.skips,
        sampling: cfg.sampling,
        head,
    }
}

/// Builds any network kind with weights drawn from `seed`.
pub fn build_network<T: Scalar>(kind: NetworkKind, cfg: &NetworkConfig, seed: u64) -> Result<NetworkHandle<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let arch = match kind {
        NetworkKind::Embedder | NetworkKind::Host => {
            Arch::Unet(UnetCore::new(&mut store, "unet", &unet_spec(cfg, HeadKind::Image), &mut rng))
        }
        NetworkKind::Extractor | NetworkKind::SurrogateUnet => {
            Arch::Extractor(Extractor::new(&mut store, cfg, &mut rng))
        }
        NetworkKind::Discriminator => {
            ensure(cfg.image_side >= 32, || {
                Error::Config(format!("PatchGAN needs image_side >= 32, got {}", cfg.image_side))
            })?;
            Arch::PatchGan(PatchGan::new(&mut store, cfg, &mut rng))
        }
        NetworkKind::SurrogateConv => Arch::ConvGen(ConvGen::new(&mut store, cfg, &mut rng)),
        NetworkKind::SurrogateRes => {
            ensure(cfg.image_side % 4 == 0, || Error::Config("ResGen needs image_side divisible by 4".into()))?;
            Arch::ResGen(ResGen::new(&mut store, cfg, &mut rng))
        }
        NetworkKind::IdentityHost => Arch::Identity,
    };
    Ok(NetworkHandle {
        kind,
        config: cfg.clone(),
        store,
        arch,
    })
}

pub fn build_embedder<T: Scalar>(cfg: &EmbedderConfig, seed: u64) -> Result<NetworkHandle<T>> {
    build_network(NetworkKind::Embedder, cfg, seed)
}

pub fn build_extractor<T: Scalar>(cfg: &NetworkConfig, seed: u64) -> Result<NetworkHandle<T>> {
    build_network(NetworkKind::Extractor, cfg, seed)
}

pub fn build_discriminator<T: Scalar>(cfg: &NetworkConfig, seed: u64) -> Result<NetworkHandle<T>> {
    build_network(NetworkKind::Discriminator, cfg, seed)
}

pub fn build_surrogate<T: Scalar>(kind: SurrogateKind, cfg: &NetworkConfig, seed: u64) -> Result<NetworkHandle<T>> {
    build_network(kind.network_kind(), cfg, seed)
}

/// Baseline host: a U-net trained with per-pixel L1.
pub fn build_host<T: Scalar>(cfg: &NetworkConfig, seed: u64) -> Result<NetworkHandle<T>> {
    build_network(NetworkKind::Host, cfg, seed)
}

pub fn identity_host<T: Scalar>(image_side: usize) -> NetworkHandle<T> {
    NetworkHandle {
        kind: NetworkKind::IdentityHost,
        config: NetworkConfig {
            image_side,
            ..NetworkConfig::default()
        },
        store: ParamStore::new(),
        arch: Arch::Identity,
    }
}

impl<T: Scalar> NetworkHandle<T> {
    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Per-sample input shape `(channels, side, side)`.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        let s = self.config.image_side;
        match self.kind {
            NetworkKind::Discriminator => (6, s, s),
            _ => (3, s, s),
        }
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        let s = self.config.image_side;
        match self.kind {
            NetworkKind::Discriminator => {
                let p = PatchGan::grid_side(s);
                (1, p, p)
            }
            _ => (3, s, s),
        }
    }

    /// Records a forward pass of an `n x c x side x side` batch.
    pub fn forward(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let s = g.shape(x);
        let (c, h, w) = self.input_shape();
        assert_eq!((s.c, s.h, s.w), (c, h, w), "{} input shape", self.kind);
        match &self.arch {
            Arch::Unet(net) => net.forward(g, b, x, ctx),
            Arch::Extractor(net) => net.forward(g, b, x, ctx),
            Arch::PatchGan(net) => net.forward(g, b, x, ctx),
            Arch::ConvGen(net) => net.forward(g, b, x, ctx),
            Arch::ResGen(net) => net.forward(g, b, x, ctx),
            Arch::Identity => x,
        }
    }

    /// Evaluation-mode forward of a batch tensor.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.input_shape();
        let s = x.shape();
        ensure((s.c, s.h, s.w) == (c, h, w), || {
            Error::Shape(format!(
                "{} expects {}x{}x{} inputs, got {}x{}x{}",
                self.kind, c, h, w, s.c, s.h, s.w
            ))
        })?;
        let g = Graph::new();
        let b = self.store.bind(&g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&g, &b, xv, &mut Ctx::eval());
        Ok((*g.value(y)).clone())
    }

    /// Evaluation-mode forward of a batch, `chunk` samples at a time.
    pub fn infer_images(&self, images: &[ImageArray<T>], chunk: usize) -> Result<Vec<ImageArray<T>>> {
        let mut out = Vec::with_capacity(images.len());
        for part in images.chunks(chunk.max(1)) {
            let y = self.infer(&ImageArray::stack(part)?)?;
            out.extend(ImageArray::split_batch(&y));
        }
        Ok(out)
    }

    pub fn layers(&self) -> Vec<LayerTag> {
        let mut out = Vec::new();
        match &self.arch {
            Arch::Unet(net) => net.trace(&mut out),
            Arch::Extractor(net) => net.trace(&mut out),
            Arch::PatchGan(net) => net.trace(&mut out),
            Arch::ConvGen(net) => net.trace(&mut out),
            Arch::ResGen(net) => net.trace(&mut out),
            Arch::Identity => {}
        }
        out
    }

    /// Number of convolution and transpose-convolution layers.
    pub fn weight_layer_count(&self) -> usize {
        self.layers()
            .iter()
            .filter(|t| matches!(t, LayerTag::Conv { .. } | LayerTag::ConvTranspose { .. }))
            .count()
    }
}

/// Structural rules of the anti-aliased design: no max-pooling; no strided
/// convolution; every stride-2 reduction is the binomial blur; every
/// nearest up-sampling is followed by a convolution; every stride-2
/// transpose convolution is followed by the stride-1 blur.
pub fn audit_anti_aliased(layers: &[LayerTag]) -> Result<()> {
    for (i, tag) in layers.iter().enumerate() {
        let next = layers.get(i + 1);
        let bad = match tag {
            LayerTag::MaxPool => Some("max-pooling layer"),
            LayerTag::Conv { stride, .. } if *stride != 1 => Some("strided convolution"),
            LayerTag::NearestUp if !matches!(next, Some(LayerTag::Conv { stride: 1, .. })) => {
                Some("nearest up-sampling not followed by a convolution")
            }
            LayerTag::ConvTranspose { stride: 2, .. } if next != Some(&LayerTag::Blur { stride: 1 }) => {
                Some("transpose convolution without anti-aliasing blur")
            }
            LayerTag::ConvTranspose { stride, .. } if *stride != 2 => Some("unexpected transpose stride"),
            _ => None,
        };
        if let Some(msg) = bad {
            return Err(Error::Value(format!("layer {i}: {msg}")));
        }
    }
    Ok(())
}

fn check_side<T: Scalar>(net: &NetworkHandle<T>, image: &ImageArray<T>) -> Result<()> {
    let (c, h, w) = net.input_shape();
    ensure(image.dims() == (c, h, w), || {
        Error::Shape(format!(
            "{} expects a {}x{}x{} image, got {:?}",
            net.kind,
            c,
            h,
            w,
            image.dims()
        ))
    })
}

fn run_single<T: Scalar>(net: &NetworkHandle<T>, image: &ImageArray<T>) -> Result<ImageArray<T>> {
    check_side(net, image)?;
    let y = net.infer(image.tensor())?;
    Ok(ImageArray::split_batch(&y).remove(0))
}

/// Marks a host output.
pub fn embed<T: Scalar>(embedder: &NetworkHandle<T>, image: &ImageArray<T>) -> Result<ImageArray<T>> {
    run_single(embedder, image)
}

/// Recovers the watermark estimate from an image.
pub fn extract<T: Scalar>(extractor: &NetworkHandle<T>, image: &ImageArray<T>) -> Result<ImageArray<T>> {
    run_single(extractor, image)
}

pub fn host_generate<T: Scalar>(host: &NetworkHandle<T>, input: &ImageArray<T>) -> Result<ImageArray<T>> {
    run_single(host, input)
}

/// Input shape helper for batches.
pub fn batch_shape(n: usize, side: usize) -> Shape {
    Shape::new(n, 3, side, side)
}
