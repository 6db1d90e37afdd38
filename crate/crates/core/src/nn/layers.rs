//! Parameter storage and the trainable layers built on graph ops.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::conv::ConvGeom;
use crate::nn::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Updated by forward passes (normalization statistics) or never.
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Arc<Tensor<T>>,
}

/// Named, ordered collection of tensors owned by one network.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            kind,
            value: Arc::new(value),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.params[id.0].value.shape(), value.shape(), "parameter shape");
        self.params[id.0].value = Arc::new(value);
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Number of scalar entries in trainable tensors.
    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over names, shapes and little-endian values of every tensor.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update([0u8]);
            for d in p.value.shape().dims() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(T::to_le_bytes_vec(p.value.data()));
        }
        hex::encode(h.finalize())
    }

    /// Copies every tensor of `other` into the entry of the same name.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Shape(format!(
                "parameter count mismatch: {} vs {}",
                other.len(),
                self.len()
            )));
        }
        for p in other.params() {
            let id = self
                .find(&p.name)
                .ok_or_else(|| Error::Shape(format!("unknown parameter {}", p.name)))?;
            if self.get(id).shape() != p.value.shape() {
                return Err(Error::Shape(format!("shape mismatch for {}", p.name)));
            }
            self.params[id.0].value = Arc::clone(&p.value);
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: Arc::new(p.value.cast()),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Places every tensor on `graph`. Trainable entries receive gradients
    /// when `trainable` is set; buffers never do.
    pub fn bind(&self, graph: &Graph<T>, trainable: bool) -> Bound<T> {
        let vars = self
            .params
            .iter()
            .map(|p| graph.leaf(Arc::clone(&p.value), trainable && p.kind == ParamKind::Trainable))
            .collect();
        Bound {
            vars,
            trainable,
            updates: RefCell::new(Vec::new()),
        }
    }

    /// Applies buffer updates collected during a training-mode forward.
    pub fn apply_updates(&mut self, bound: &Bound<T>) {
        for (id, value) in bound.updates.borrow_mut().drain(..) {
            self.set(id, value);
        }
    }
}

/// A [`ParamStore`] placed on a graph for one forward/backward pass.
pub struct Bound<T> {
    vars: Vec<Var>,
    trainable: bool,
    updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<T: Scalar> Bound<T> {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub(crate) fn push_update(&self, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    pub fn pending_updates(&self) -> usize {
        self.updates.borrow().len()
    }

    /// Pairs of (parameter, variable) for every tensor, in registration order.
    pub fn vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.vars.iter().enumerate().map(|(i, &v)| (ParamId(i), v))
    }
}

/// Forward-pass mode and the stream driving dropout.
pub struct Ctx {
    pub train: bool,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn train(rng: ChaCha8Rng) -> Self {
        Ctx { train: true, rng }
    }

    pub fn eval() -> Self {
        use rand::SeedableRng;
        Ctx {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

fn gaussian<T: Scalar>(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::randn(shape, INIT_STD, rng)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            ParamKind::Trainable,
            gaussian(Shape::new(cout, cin, geom.kh, geom.kw), rng),
        );
        let bias = bias.then(|| {
            store.register(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(Shape::new(1, cout, 1, 1)))
        });
        Conv2d {
            weight,
            bias,
            geom,
            in_channels: cin,
            out_channels: cout,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var) -> Var {
        g.conv2d(x, b.var(self.weight), self.bias.map(|p| b.var(p)), self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            ParamKind::Trainable,
            gaussian(Shape::new(cin, cout, geom.kh, geom.kw), rng),
        );
        let bias = bias.then(|| {
            store.register(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(Shape::new(1, cout, 1, 1)))
        });
        ConvTranspose2d {
            weight,
            bias,
            geom,
            in_channels: cin,
            out_channels: cout,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var) -> Var {
        g.conv_transpose2d(x, b.var(self.weight), self.bias.map(|p| b.var(p)), self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm2d {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = Shape::new(1, channels, 1, 1);
        let gamma_init = Tensor::from_fn(s, |_, _, _, _| T::lit(1.0 + INIT_STD * rng.sample::<f64, _>(rand_distr::StandardNormal)));
        BatchNorm2d {
            gamma: store.register(format!("{name}.gamma"), ParamKind::Trainable, gamma_init),
            beta: store.register(format!("{name}.beta"), ParamKind::Trainable, Tensor::zeros(s)),
            running_mean: store.register(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(s)),
            running_var: store.register(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full(s, T::one())),
            channels,
        }
    }

    /// Training mode normalizes with batch statistics and queues the
    /// running-average update on `b`; evaluation mode uses the running values.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, b: &Bound<T>, x: Var, ctx: &Ctx) -> Var {
        let eps = T::lit(Self::EPS);
        let (gamma, beta) = (b.var(self.gamma), b.var(self.beta));
        if ctx.train {
            let (y, mean, var) = g.batch_norm_train(x, gamma, beta, eps);
            let s = g.shape(x);
            let count = (s.n * s.plane()) as f64;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = T::lit(Self::MOMENTUM);
            let rm = g.value(b.var(self.running_mean));
            let rv = g.value(b.var(self.running_var));
            let new_mean = Tensor::from_fn(rm.shape(), |_, c, _, _| (T::one() - m) * rm.data()[c] + m * mean[c]);
            let new_var = Tensor::from_fn(rv.shape(), |_, c, _, _| {
                (T::one() - m) * rv.data()[c] + m * var[c] * T::lit(unbias)
            });
            b.push_update(self.running_mean, new_mean);
            b.push_update(self.running_var, new_var);
            y
        } else {
            let rm = g.value(b.var(self.running_mean));
            let rv = g.value(b.var(self.running_var));
            g.batch_norm_eval(x, gamma, beta, rm.data(), rv.data(), eps)
        }
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var, ctx: &mut Ctx) -> Var {
        if !ctx.train || self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let scale = T::lit(1.0 / keep);
        let s = g.shape(x);
        let mask = Tensor::from_fn(s, |_, _, _, _| if ctx.rng.random::<f64>() < keep { scale } else { T::zero() });
        g.mul_const(x, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn running_stats_follow_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1, &mut rng);
        let g = Graph::new();
        let b = store.bind(&g, true);
        let x = g.constant(Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let ctx = Ctx::train(rng);
        bn.forward(&g, &b, x, &ctx);
        store.apply_updates(&b);
        assert!((store.get(bn.running_mean).data()[0] - 0.4).abs() < 1e-12);
        // unbiased variance of {1,3,5,7} is 20/3
        let expect = 0.9 + 0.1 * 20.0 / 3.0;
        assert!((store.get(bn.running_var).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_is_deterministic_and_dropout_free() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(&mut store, "c", 2, 3, ConvGeom::same(3), true, &mut rng);
        let x = Tensor::<f32>::randn(Shape::new(1, 2, 5, 5), 1.0, &mut rng);
        let run = || {
            let g = Graph::new();
            let b = store.bind(&g, false);
            let xv = g.constant(x.clone());
            let y = conv.forward(&g, &b, xv);
            let y = Dropout { rate: 0.5 }.forward(&g, y, &mut Ctx::eval());
            g.value(y)
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn digest_tracks_values() {
        let mut store = ParamStore::<f32>::new();
        let id = store.register("a", ParamKind::Trainable, Tensor::zeros(Shape::new(1, 1, 1, 3)));
        let d0 = store.digest();
        assert_eq!(d0, store.clone().digest());
        store.get_mut(id).data_mut()[1] = 1.0;
        assert_ne!(d0, store.digest());
        assert_eq!(store.parameter_count(), 3);
    }
}
