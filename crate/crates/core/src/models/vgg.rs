//! VGG19 feature extractor for the perceptual loss.
//!
//! Pretrained weights are read from a safetensors file using the
//! torchvision key layout (`features.<index>.weight` / `.bias`). Without a
//! file, a width-reduced network with fixed He-initialized weights is used.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, ConvGeom, Graph, ParamKind, ParamStore, Var};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Convolutions per stage.
pub const VGG19_STAGE_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
pub const VGG19_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Environment variable naming a safetensors VGG19 checkpoint.
pub const VGG19_WEIGHTS_ENV: &str = "AAWM_VGG19_WEIGHTS";

#[derive(Clone, Debug)]
pub struct Vgg19<T> {
    store: ParamStore<T>,
    stages: Vec<Vec<Conv2d>>,
    width_divisor: usize,
}

/// torchvision `features` indices of the sixteen convolutions.
fn torchvision_indices() -> Vec<usize> {
    let mut idx = Vec::new();
    let mut k = 0;
    for (s, &n) in VGG19_STAGE_CONVS.iter().enumerate() {
        for _ in 0..n {
            idx.push(k);
            k += 2; // conv, relu
        }
        if s < 4 {
            k += 1; // pool
        }
    }
    idx
}

impl<T: Scalar> Vgg19<T> {
    fn build(width_divisor: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        let mut cin = 3;
        let idx = torchvision_indices();
        let mut k = 0;
        for (s, &n) in VGG19_STAGE_CONVS.iter().enumerate() {
            let cout = (VGG19_WIDTHS[s] / width_divisor).max(1);
            let mut convs = Vec::new();
            for _ in 0..n {
                let conv = Conv2d::new(
                    &mut store,
                    &format!("features.{}", idx[k]),
                    cin,
                    cout,
                    ConvGeom::square(3, 1, 1),
                    true,
                    &mut rng,
                );
                let he = (2.0 / (cin * 9) as f64).sqrt();
                let w = Tensor::randn(store.get(conv.weight).shape(), he, &mut rng);
                store.set(conv.weight, w);
                convs.push(conv);
                cin = cout;
                k += 1;
            }
            stages.push(convs);
        }
        Vgg19 {
            store,
            stages,
            width_divisor,
        }
    }

    /// Fixed random weights with every width divided by `width_divisor`.
    pub fn random(width_divisor: usize, seed: u64) -> Self {
        assert!(width_divisor >= 1);
        Self::build(width_divisor, seed)
    }

    /// Full-width network with weights read from a safetensors file.
    pub fn from_safetensors(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut net = Self::build(1, 0);
        let params: Vec<(String, Shape)> = net
            .store
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape()))
            .collect();
        for (name, shape) in params {
            let view = st
                .tensor(&name)
                .map_err(|_| Error::Config(format!("{}: missing tensor {name}", path.display())))?;
            let values: Vec<f64> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect(),
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                other => return Err(Error::Config(format!("{name}: unsupported dtype {other:?}"))),
            };
            if values.len() != shape.len() {
                return Err(Error::Shape(format!(
                    "{name}: expected {} values, file has {}",
                    shape.len(),
                    values.len()
                )));
            }
            let id = net.store.find(&name).expect("registered");
            net.store.set(id, Tensor::from_vec(shape, values.into_iter().map(T::lit).collect())?);
        }
        Ok(net)
    }

    /// Pretrained weights when `AAWM_VGG19_WEIGHTS` (or `path`) is set,
    /// otherwise the random slim network.
    pub fn from_env_or_random(path: Option<&Path>, width_divisor: usize, seed: u64) -> Result<Self> {
        let env = std::env::var_os(VGG19_WEIGHTS_ENV);
        match env.as_deref().map(Path::new).or(path) {
            Some(p) => Self::from_safetensors(p),
            None => Ok(Self::random(width_divisor, seed)),
        }
    }

    pub fn width_divisor(&self) -> usize {
        self.width_divisor
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// Binds the frozen weights; gradients flow to the input only.
    pub fn bind(&self, g: &Graph<T>) -> Bound<T> {
        debug_assert!(self.store.params().iter().all(|p| p.kind == ParamKind::Trainable));
        self.store.bind(g, false)
    }

    /// ReLU outputs at the end of each of the five stages, for an input in
    /// [0, 1]. ImageNet normalization is applied internally.
    pub fn features(&self, g: &Graph<T>, b: &Bound<T>, x: Var) -> Vec<Var> {
        let s = g.shape(x);
        assert_eq!(s.c, 3, "VGG input must have 3 channels");
        let mut scale = Vec::with_capacity(3);
        let mut shift = Vec::with_capacity(3);
        for c in 0..3 {
            scale.push(T::lit(1.0 / IMAGENET_STD[c]));
            shift.push(T::lit(-IMAGENET_MEAN[c] / IMAGENET_STD[c]));
        }
        let mut h = g.channel_affine(x, &scale, &shift);
        let mut out = Vec::with_capacity(5);
        for (i, convs) in self.stages.iter().enumerate() {
            if i > 0 {
                h = g.max_pool2(h);
            }
            for conv in convs {
                h = conv.forward(g, b, h);
                h = g.relu(h);
            }
            out.push(h);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torchvision_layout() {
        assert_eq!(
            torchvision_indices(),
            vec![0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]
        );
    }

    #[test]
    fn stage_shapes() {
        let vgg = Vgg19::<f32>::random(8, 0);
        let g = Graph::new();
        let b = vgg.bind(&g);
        let x = g.constant(Tensor::full(Shape::new(2, 3, 32, 32), 0.5));
        let f = vgg.features(&g, &b, x);
        let sides: Vec<(usize, usize)> = f.iter().map(|&v| (g.shape(v).c, g.shape(v).h)).collect();
        assert_eq!(sides, vec![(8, 32), (16, 16), (32, 8), (64, 4), (64, 2)]);
    }

    #[test]
    fn safetensors_roundtrip() {
        let vgg = Vgg19::<f32>::random(1, 3);
        let tensors: Vec<(String, Vec<u8>, Vec<usize>)> = vgg
            .store()
            .params()
            .iter()
            .map(|p| {
                let s = p.value.shape();
                let shape = if s.h == 1 && s.w == 1 && s.n == 1 { vec![s.c] } else { s.dims().to_vec() };
                (p.name.clone(), f32::to_le_bytes_vec(p.value.data()), shape)
            })
            .collect();
        let views: Vec<(String, safetensors::tensor::TensorView)> = tensors
            .iter()
            .map(|(n, b, s)| (n.clone(), safetensors::tensor::TensorView::new(Dtype::F32, s.clone(), b).unwrap()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg.safetensors");
        safetensors::serialize_to_file(views, None, &path).unwrap();
        let loaded = Vgg19::<f32>::from_safetensors(&path).unwrap();
        assert_eq!(loaded.store().digest(), vgg.store().digest());
    }
}
