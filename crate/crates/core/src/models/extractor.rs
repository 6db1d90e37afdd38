//! Extraction network: a down-sampling front layer, a U-net backbone at half
//! resolution, and a mirrored up-sampling back layer.

use rand_chacha::ChaCha8Rng;

use crate::models::unet::{tanh01, DownBlock, HeadKind, UnetCore, UnetSpec};
use crate::models::{LayerTag, NetworkConfig, Sampling};
use crate::nn::{Bound, Conv2d, ConvGeom, ConvTranspose2d, Ctx, Graph, ParamStore, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
enum Back {
    NearestConv(Conv2d),
    Transpose(ConvTranspose2d),
}

#[derive(Clone, Debug)]
pub(crate) struct Extractor {
    front: DownBlock,
    backbone: UnetCore,
    back: Back,
}

impl Extractor {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Self {
        let b = cfg.base_channels;
        let front = DownBlock::new(store, "front", 3, b, false, cfg.sampling, rng);
        let spec = UnetSpec {
            in_channels: b,
            out_channels: b,
            base: b,
            depth: cfg.depth - 1,
            dropout: cfg.dropout_rate,
            skips: cfg.skips,
            sampling: cfg.sampling,
            head: HeadKind::Features,
        };
        let backbone = UnetCore::new(store, "backbone", &spec, rng);
        let back = match cfg.sampling {
            Sampling::AntiAliased => Back::NearestConv(Conv2d::new(store, "back.conv", b, 3, ConvGeom::same(3), true, rng)),
            Sampling::Strided => Back::Transpose(ConvTranspose2d::new(
                store,
                "back.convt",
                b,
                3,
                ConvGeom::square(4, 2, 1),
                true,
                rng,
            )),
        };
        Extractor { front, backbone, back }
    }

    pub(crate) fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let h = self.front.forward(g, b, x, ctx);
        let h = self.backbone.forward(g, b, h, ctx);
        let h = match &self.back {
            Back::NearestConv(conv) => {
                let u = g.upsample_nearest2(h);
                conv.forward(g, b, u)
            }
            Back::Transpose(convt) => convt.forward(g, b, h),
        };
        tanh01(g, h)
    }

    pub(crate) fn trace(&self, out: &mut Vec<LayerTag>) {
        self.front.trace(out);
        self.backbone.trace(out);
        match &self.back {
            Back::NearestConv(conv) => {
                out.push(LayerTag::NearestUp);
                out.push(LayerTag::Conv {
                    kernel: conv.geom.kh,
                    stride: 1,
                });
            }
            Back::Transpose(convt) => out.push(LayerTag::ConvTranspose {
                kernel: convt.geom.kh,
                stride: convt.geom.stride,
            }),
        }
        out.push(LayerTag::Tanh01);
    }
}
