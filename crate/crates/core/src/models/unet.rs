//! Encoder/decoder U-net used by the embedder, the extractor backbone and
//! the baseline host, in anti-aliased or strided form.

use rand_chacha::ChaCha8Rng;

use crate::models::{LayerTag, Sampling};
use crate::nn::{BatchNorm2d, Bound, Conv2d, ConvGeom, ConvTranspose2d, Ctx, Dropout, Graph, ParamStore, Var};
use crate::scalar::Scalar;

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

/// `(tanh(x) + 1) / 2`.
pub(crate) fn tanh01<T: Scalar>(g: &Graph<T>, x: Var) -> Var {
    let t = g.tanh(x);
    g.affine(t, T::lit(0.5), T::lit(0.5))
}

/// Down-sampling module. Anti-aliased: 4x4 stride-1 conv, LeakyReLU,
/// optional BN, then the stride-2 binomial blur. Strided: 4x4 stride-2 conv
/// in place of conv + blur.
#[derive(Clone, Debug)]
pub(crate) struct DownBlock {
    sampling: Sampling,
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
}

impl DownBlock {
    pub(crate) fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        bn: bool,
        sampling: Sampling,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let geom = match sampling {
            Sampling::AntiAliased => ConvGeom::same(4),
            Sampling::Strided => ConvGeom::square(4, 2, 1),
        };
        let conv = Conv2d::new(store, &format!("{name}.conv"), cin, cout, geom, !bn, rng);
        let bn = bn.then(|| BatchNorm2d::new(store, &format!("{name}.bn"), cout, rng));
        DownBlock { sampling, conv, bn }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let h = self.conv.forward(g, b, x);
        let h = g.leaky_relu(h, T::lit(LEAKY_SLOPE));
        let h = match &self.bn {
            Some(bn) => bn.forward(g, b, h, ctx),
            None => h,
        };
        match self.sampling {
            Sampling::AntiAliased => g.blur(h, 2),
            Sampling::Strided => h,
        }
    }

    pub(crate) fn trace(&self, out: &mut Vec<LayerTag>) {
        out.push(LayerTag::Conv {
            kernel: self.conv.geom.kh,
            stride: self.conv.geom.stride,
        });
        out.push(LayerTag::LeakyRelu);
        if self.bn.is_some() {
            out.push(LayerTag::BatchNorm);
        }
        if self.sampling == Sampling::AntiAliased {
            out.push(LayerTag::Blur { stride: 2 });
        }
    }
}

#[derive(Clone, Debug)]
enum Upsampler {
    /// Nearest replication followed by a 3x3 convolution.
    NearestConv(Conv2d),
    Transpose(ConvTranspose2d),
}

/// Up-sampling module: up-sample, BN, optional dropout, ReLU.
#[derive(Clone, Debug)]
pub(crate) struct UpBlock {
    up: Upsampler,
    bn: BatchNorm2d,
    dropout: Dropout,
}

impl UpBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        dropout: f64,
        sampling: Sampling,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let up = match sampling {
            Sampling::AntiAliased => {
                Upsampler::NearestConv(Conv2d::new(store, &format!("{name}.conv"), cin, cout, ConvGeom::same(3), false, rng))
            }
            Sampling::Strided => Upsampler::Transpose(ConvTranspose2d::new(
                store,
                &format!("{name}.convt"),
                cin,
                cout,
                ConvGeom::square(4, 2, 1),
                false,
                rng,
            )),
        };
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), cout, rng);
        UpBlock {
            up,
            bn,
            dropout: Dropout { rate: dropout },
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let h = match &self.up {
            Upsampler::NearestConv(conv) => {
                let u = g.upsample_nearest2(x);
                conv.forward(g, b, u)
            }
            Upsampler::Transpose(convt) => convt.forward(g, b, x),
        };
        let h = self.bn.forward(g, b, h, ctx);
        let h = self.dropout.forward(g, h, ctx);
        g.relu(h)
    }

    pub(crate) fn trace(&self, out: &mut Vec<LayerTag>) {
        match &self.up {
            Upsampler::NearestConv(conv) => {
                out.push(LayerTag::NearestUp);
                out.push(LayerTag::Conv {
                    kernel: conv.geom.kh,
                    stride: 1,
                });
            }
            Upsampler::Transpose(convt) => out.push(LayerTag::ConvTranspose {
                kernel: convt.geom.kh,
                stride: convt.geom.stride,
            }),
        }
        out.push(LayerTag::BatchNorm);
        if self.dropout.rate > 0.0 {
            out.push(LayerTag::Dropout);
        }
        out.push(LayerTag::Relu);
    }
}

/// What the final 2x up-sampling layer produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum HeadKind {
    /// Image in [0, 1] through `(tanh + 1) / 2`.
    Image,
    /// Feature map through BN and ReLU.
    Features,
}

/// Output layer: 4x4 stride-2 transpose convolution, followed (when
/// anti-aliased) by the stride-1 binomial blur.
#[derive(Clone, Debug)]
pub(crate) struct OutputHead {
    kind: HeadKind,
    sampling: Sampling,
    convt: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
}

impl OutputHead {
    pub(crate) fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kind: HeadKind,
        sampling: Sampling,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let image = kind == HeadKind::Image;
        let convt = ConvTranspose2d::new(
            store,
            &format!("{name}.convt"),
            cin,
            cout,
            ConvGeom::square(4, 2, 1),
            image,
            rng,
        );
        let bn = (!image).then(|| BatchNorm2d::new(store, &format!("{name}.bn"), cout, rng));
        OutputHead {
            kind,
            sampling,
            convt,
            bn,
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let h = self.convt.forward(g, b, x);
        let h = match self.sampling {
            Sampling::AntiAliased => g.blur(h, 1),
            Sampling::Strided => h,
        };
        match (&self.kind, &self.bn) {
            (HeadKind::Image, _) => tanh01(g, h),
            (HeadKind::Features, Some(bn)) => {
                let h = bn.forward(g, b, h, ctx);
                g.relu(h)
            }
            (HeadKind::Features, None) => unreachable!("feature head without BN"),
        }
    }

    pub(crate) fn trace(&self, out: &mut Vec<LayerTag>) {
        out.push(LayerTag::ConvTranspose {
            kernel: self.convt.geom.kh,
            stride: self.convt.geom.stride,
        });
        if self.sampling == Sampling::AntiAliased {
            out.push(LayerTag::Blur { stride: 1 });
        }
        match self.kind {
            HeadKind::Image => out.push(LayerTag::Tanh01),
            HeadKind::Features => {
                out.push(LayerTag::BatchNorm);
                out.push(LayerTag::Relu);
            }
        }
    }
}

/// Stage widths: `base * 2^i`, capped at `8 * base`.
pub(crate) fn stage_widths(base: usize, depth: usize) -> Vec<usize> {
    (0..depth).map(|i| base * (1usize << i.min(3))).collect()
}

/// `depth` down-sampling stages, `depth - 1` up-sampling stages with
/// optional skip concatenations, and an output head.
#[derive(Clone, Debug)]
pub(crate) struct UnetCore {
    down: Vec<DownBlock>,
    up: Vec<UpBlock>,
    head: OutputHead,
    skips: bool,
}

pub(crate) struct UnetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base: usize,
    pub depth: usize,
    pub dropout: f64,
    pub skips: bool,
    pub sampling: Sampling,
    pub head: HeadKind,
}

impl UnetCore {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, spec: &UnetSpec, rng: &mut ChaCha8Rng) -> Self {
        let d = spec.depth;
        let widths = stage_widths(spec.base, d);
        let mut down = Vec::with_capacity(d);
        for i in 0..d {
            let cin = if i == 0 { spec.in_channels } else { widths[i - 1] };
            // No BN on the first stage, nor on the 1x1 innermost stage where
            // batch statistics collapse.
            let bn = i > 0 && i + 1 < d;
            down.push(DownBlock::new(store, &format!("{name}.down{i}"), cin, widths[i], bn, spec.sampling, rng));
        }
        let mut up = Vec::with_capacity(d.saturating_sub(1));
        for j in 0..d.saturating_sub(1) {
            let below = widths[d - 1 - j];
            let cin = if j == 0 || !spec.skips { below } else { 2 * below };
            let dropout = if j < 2 { spec.dropout } else { 0.0 };
            up.push(UpBlock::new(store, &format!("{name}.up{j}"), cin, widths[d - 2 - j], dropout, spec.sampling, rng));
        }
        let head_in = if d >= 2 && spec.skips { 2 * widths[0] } else { widths[0] };
        let head = OutputHead::new(store, &format!("{name}.out"), head_in, spec.out_channels, spec.head, spec.sampling, rng);
        UnetCore {
            down,
            up,
            head,
            skips: spec.skips,
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let mut enc = Vec::with_capacity(self.down.len());
        let mut h = x;
        for blk in &self.down {
            h = blk.forward(g, b, h, ctx);
            enc.push(h);
        }
        let d = self.down.len();
        for (j, blk) in self.up.iter().enumerate() {
            let inp = if j > 0 && self.skips { g.concat_channels(&[h, enc[d - 1 - j]]) } else { h };
            h = blk.forward(g, b, inp, ctx);
        }
        let inp = if d >= 2 && self.skips { g.concat_channels(&[h, enc[0]]) } else { h };
        self.head.forward(g, b, inp, ctx)
    }

    pub(crate) fn trace(&self, out: &mut Vec<LayerTag>) {
        for blk in &self.down {
            blk.trace(out);
        }
        for (j, blk) in self.up.iter().enumerate() {
            if j > 0 && self.skips {
                out.push(LayerTag::Concat);
            }
            blk.trace(out);
        }
        if self.down.len() >= 2 && self.skips {
            out.push(LayerTag::Concat);
        }
        self.head.trace(out);
    }
}
