//! Conditional PatchGAN with a 70x70 receptive field.

use rand_chacha::ChaCha8Rng;

use crate::models::unet::LEAKY_SLOPE;
use crate::models::{LayerTag, NetworkConfig};
use crate::nn::{BatchNorm2d, Bound, Conv2d, ConvGeom, Ctx, Graph, ParamStore, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
}

/// Layers C(b)-C(2b)-C(4b) at stride 2, C(8b) at stride 1, then a 1-channel
/// stride-1 convolution and a sigmoid. Each convolution is 4x4 with padding 1.
#[derive(Clone, Debug)]
pub(crate) struct PatchGan {
    stages: Vec<Stage>,
    out: Conv2d,
}

impl PatchGan {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Self {
        let b = cfg.base_channels;
        let plan = [(6, b, 2, false), (b, 2 * b, 2, true), (2 * b, 4 * b, 2, true), (4 * b, 8 * b, 1, true)];
        let stages = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride, bn))| Stage {
                conv: Conv2d::new(store, &format!("d{i}.conv"), cin, cout, ConvGeom::square(4, stride, 1), !bn, rng),
                bn: bn.then(|| BatchNorm2d::new(store, &format!("d{i}.bn"), cout, rng)),
            })
            .collect();
        let out = Conv2d::new(store, "d_out.conv", 8 * b, 1, ConvGeom::square(4, 1, 1), true, rng);
        PatchGan { stages, out }
    }

    /// `x` is the channel concatenation of condition and candidate.
    pub(crate) fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &mut Ctx) -> Var {
        let mut h = x;
        for s in &self.stages {
            h = s.conv.forward(g, b, h);
            if let Some(bn) = &s.bn {
                h = bn.forward(g, b, h, ctx);
            }
            h = g.leaky_relu(h, T::lit(LEAKY_SLOPE));
        }
        let h = self.out.forward(g, b, h);
        g.sigmoid(h)
    }

    pub(crate) fn trace(&self, out: &mut Vec<LayerTag>) {
        for s in &self.stages {
            out.push(LayerTag::Conv {
                kernel: 4,
                stride: s.conv.geom.stride,
            });
            if s.bn.is_some() {
                out.push(LayerTag::BatchNorm);
            }
            out.push(LayerTag::LeakyRelu);
        }
        out.push(LayerTag::Conv { kernel: 4, stride: 1 });
        out.push(LayerTag::Sigmoid);
    }

    /// Side of the patch grid for a square input of side `side`.
    pub(crate) fn grid_side(side: usize) -> usize {
        let mut s = side;
        for stride in [2, 2, 2, 1, 1] {
            s = (s + 2 - 4) / stride + 1;
        }
        s
    }
}
