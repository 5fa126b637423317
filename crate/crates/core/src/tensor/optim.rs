//! Parameter update rules. Only trainable parameters with a gradient move.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Float, Gradients, ParamStore};

pub trait Optimizer<T: Float> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with optional decoupled weight decay.
pub struct Adam<T> {
    cfg: AdamConfig,
    t: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Float> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl<T: Float> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = T::of(self.cfg.lr);
        let wd = T::of(self.cfg.lr * self.cfg.weight_decay);
        let (b1t, b2t) = (T::of(b1), T::of(b2));
        let (bc1, bc2, eps) = (T::of(bc1), T::of(bc2), T::of(self.cfg.eps));
        for (name, g) in grads.params() {
            let Some(p) = params.get_mut(name) else { continue };
            if !p.trainable {
                continue;
            }
            let n = g.numel();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let mut data = p.value.data().to_vec();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1t * m[i] + (T::one() - b1t) * gi;
                v[i] = b2t * v[i] + (T::one() - b2t) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps) - wd * data[i];
            }
            p.value = super::Tensor::new(p.value.shape(), data).expect("same shape");
        }
    }
}

/// SGD with classical momentum: `v = mu v + g; p -= lr v`.
pub struct Sgd<T> {
    lr: f64,
    momentum: f64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }
}

impl<T: Float> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        for (name, g) in grads.params() {
            let Some(p) = params.get_mut(name) else { continue };
            if !p.trainable {
                continue;
            }
            let vel = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); g.numel()]);
            let mut data = p.value.data().to_vec();
            for i in 0..data.len() {
                vel[i] = mu * vel[i] + g.data()[i];
                data[i] -= lr * vel[i];
            }
            p.value = super::Tensor::new(p.value.shape(), data).expect("same shape");
        }
    }
}
