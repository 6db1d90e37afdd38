use serde::{Deserialize, Serialize};

use crate::nn::graph::Gradients;
use crate::nn::layers::{Bound, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2.0e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; one moment pair per trainable tensor.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable tensor of `store` that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, bound: &Bound<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        let kinds: Vec<ParamKind> = store.params().iter().map(|p| p.kind).collect();
        for (id, var) in bound.vars() {
            let i = id.index();
            if kinds[i] != ParamKind::Trainable {
                continue;
            }
            let Some(g) = grads.get(var) else { continue };
            let slot = self.moments[i].get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let (m, v) = (&mut slot.0, &mut slot.1);
            let w = store.get_mut(id);
            for (((wv, mv), vv), &gv) in w
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                *wv -= step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
    }
}
