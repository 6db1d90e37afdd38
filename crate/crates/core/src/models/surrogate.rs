//! Attacker-side surrogate generators without skip connections.

use rand_chacha::ChaCha8Rng;

use crate::models::unet::{tanh01, LEAKY_SLOPE};
use crate::models::{LayerTag, NetworkConfig};
use crate::nn::{BatchNorm2d, Bound, Conv2d, ConvGeom, ConvTranspose2d, Ctx, Graph, ParamStore, Var};
use crate::scalar::Scalar;

/// Number of stride-2 layers used by [`ConvGen`] at a given side; the
/// remaining encoder/decoder layers keep the resolution.
fn conv_gen_reductions(side: usize) -> usize {
    let mut r = 0;
    let mut s = side;
    while r < 6 && s >= 8 {
        s /= 2;
        r += 1;
    }
    r
}

/// Six convolutions followed by six transposed convolutions.
#[derive(Clone, Debug)]
pub(crate) struct ConvGen {
    enc: Vec<(Conv2d, Option<BatchNorm2d>)>,
    dec: Vec<(ConvTranspose2d, Option<BatchNorm2d>)>,
}

impl ConvGen {
    pub const LAYERS: usize = 6;

    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Self {
        let b = cfg.base_channels;
        let widths: Vec<usize> = (0..Self::LAYERS).map(|i| b * (1usize << i.min(3))).collect();
        let reductions = conv_gen_reductions(cfg.image_side);
        let geom = |i: usize| {
            if i < reductions {
                ConvGeom::square(4, 2, 1)
            } else {
                ConvGeom::square(3, 1, 1)
            }
        };
        let enc = (0..Self::LAYERS)
            .map(|i| {
                let cin = if i == 0 { 3 } else { widths[i - 1] };
                let bn = i > 0;
                (
                    Conv2d::new(store, &format!("enc{i}.conv"), cin, widths[i], geom(i), !bn, rng),
                    bn.then(|| BatchNorm2d::new(store, &format!("enc{i}.bn"), widths[i], rng)),
                )
            })
            .collect();
        let dec = (0..Self::LAYERS)
            .map(|j| {
                // Mirror of encoder layer `i`.
                let i = Self::LAYERS - 1 - j;
                let cout = if i == 0 { 3 } else { widths[i - 1] };
                let last = i == 0;
                (
                    ConvTranspose2d::new(store, &format!("dec{j}.convt"), widths[i], cout, geom(i), last, rng),
                    (!last).then(|| BatchNorm2d::new(store, &format!("dec{j}.bn"), cout, rng)),
                )
            })
            .collect();
        ConvGen { enc, dec }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let mut h = x;
        for (conv, bn) in &self.enc {
            h = conv.forward(g, b, h);
            if let Some(bn) = bn {
                h = bn.forward(g, b, h, ctx);
            }
            h = g.leaky_relu(h, T::lit(LEAKY_SLOPE));
        }
        for (convt, bn) in &self.dec {
            h = convt.forward(g, b, h);
            match bn {
                Some(bn) => {
                    h = bn.forward(g, b, h, ctx);
                    h = g.relu(h);
                }
                None => h = tanh01(g, h),
            }
        }
        h
    }

    pub(crate) fn trace(&self, out: &mut Vec<LayerTag>) {
        for (conv, bn) in &self.enc {
            out.push(LayerTag::Conv {
                kernel: conv.geom.kh,
                stride: conv.geom.stride,
            });
            if bn.is_some() {
                out.push(LayerTag::BatchNorm);
            }
            out.push(LayerTag::LeakyRelu);
        }
        for (convt, bn) in &self.dec {
            out.push(LayerTag::ConvTranspose {
                kernel: convt.geom.kh,
                stride: convt.geom.stride,
            });
            if bn.is_some() {
                out.push(LayerTag::BatchNorm);
                out.push(LayerTag::Relu);
            } else {
                out.push(LayerTag::Tanh01);
            }
        }
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    c1: Conv2d,
    n1: BatchNorm2d,
    c2: Conv2d,
    n2: BatchNorm2d,
}

/// ResNet generator: 7x7 stem, two stride-2 reductions, residual blocks,
/// two transposed-convolution expansions and a 7x7 output convolution.
#[derive(Clone, Debug)]
pub(crate) struct ResGen {
    stem: (Conv2d, BatchNorm2d),
    down: Vec<(Conv2d, BatchNorm2d)>,
    blocks: Vec<ResBlock>,
    up: Vec<(ConvTranspose2d, BatchNorm2d)>,
    out: Conv2d,
}

impl ResGen {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Self {
        let b = cfg.base_channels;
        let stem = (
            Conv2d::new(store, "stem.conv", 3, b, ConvGeom::square(7, 1, 3), false, rng),
            BatchNorm2d::new(store, "stem.bn", b, rng),
        );
        let down = (0..2)
            .map(|i| {
                let (cin, cout) = (b << i, b << (i + 1));
                (
                    Conv2d::new(store, &format!("down{i}.conv"), cin, cout, ConvGeom::square(3, 2, 1), false, rng),
                    BatchNorm2d::new(store, &format!("down{i}.bn"), cout, rng),
                )
            })
            .collect();
        let c = 4 * b;
        let blocks = (0..cfg.res_blocks)
            .map(|i| ResBlock {
                c1: Conv2d::new(store, &format!("res{i}.conv1"), c, c, ConvGeom::square(3, 1, 1), false, rng),
                n1: BatchNorm2d::new(store, &format!("res{i}.bn1"), c, rng),
                c2: Conv2d::new(store, &format!("res{i}.conv2"), c, c, ConvGeom::square(3, 1, 1), false, rng),
                n2: BatchNorm2d::new(store, &format!("res{i}.bn2"), c, rng),
            })
            .collect();
        let up = (0..2)
            .map(|i| {
                let (cin, cout) = (c >> i, c >> (i + 1));
                (
                    ConvTranspose2d::new(store, &format!("up{i}.convt"), cin, cout, ConvGeom::square(4, 2, 1), false, rng),
                    BatchNorm2d::new(store, &format!("up{i}.bn"), cout, rng),
                )
            })
            .collect();
        let out = Conv2d::new(store, "out.conv", b, 3, ConvGeom::square(7, 1, 3), true, rng);
        ResGen {
            stem,
            down,
            blocks,
            up,
            out,
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let h = self.stem.0.forward(g, b, x);
        let h = self.stem.1.forward(g, b, h, ctx);
        let mut h = g.relu(h);
        for (conv, bn) in &self.down {
            h = conv.forward(g, b, h);
            h = bn.forward(g, b, h, ctx);
            h = g.relu(h);
        }
        for blk in &self.blocks {
            let r = blk.c1.forward(g, b, h);
            let r = blk.n1.forward(g, b, r, ctx);
            let r = g.relu(r);
            let r = blk.c2.forward(g, b, r);
            let r = blk.n2.forward(g, b, r, ctx);
            h = g.add(h, r);
        }
        for (convt, bn) in &self.up {
            h = convt.forward(g, b, h);
            h = bn.forward(g, b, h, ctx);
            h = g.relu(h);
        }
        let h = self.out.forward(g, b, h);
        tanh01(g, h)
    }

    pub(crate) fn trace(&self, out: &mut Vec<LayerTag>) {
        out.extend([LayerTag::Conv { kernel: 7, stride: 1 }, LayerTag::BatchNorm, LayerTag::Relu]);
        for _ in &self.down {
            out.extend([LayerTag::Conv { kernel: 3, stride: 2 }, LayerTag::BatchNorm, LayerTag::Relu]);
        }
        for _ in &self.blocks {
            out.extend([
                LayerTag::Conv { kernel: 3, stride: 1 },
                LayerTag::BatchNorm,
                LayerTag::Relu,
                LayerTag::Conv { kernel: 3, stride: 1 },
                LayerTag::BatchNorm,
                LayerTag::ResidualAdd,
            ]);
        }
        for _ in &self.up {
            out.extend([LayerTag::ConvTranspose { kernel: 4, stride: 2 }, LayerTag::BatchNorm, LayerTag::Relu]);
        }
        out.extend([LayerTag::Conv { kernel: 7, stride: 1 }, LayerTag::Tanh01]);
    }
}
