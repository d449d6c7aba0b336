//! SGD with momentum and Adam. Optimizer state is keyed by parameter name so
//! it can be checkpointed alongside the weights.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};

use crate::{Float, Layer, StateMut};

/// Momentum SGD with coupled L2 weight decay on parameters flagged `decay`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: BTreeMap<String, ArrayD<T>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    /// One update of every parameter under `layer` (names prefixed by `prefix`).
    pub fn step(&mut self, lr: f64, prefix: &str, layer: &mut dyn Layer<T>) {
        let (lr, mom, wd) = (T::of(lr), T::of(self.momentum), T::of(self.weight_decay));
        let buffers = &mut self.buffers;
        layer.visit_mut(prefix, &mut |name, s| {
            let StateMut::Param(p) = s else { return };
            let buf = buffers
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            let decay = if p.decay { wd } else { T::zero() };
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(buf)
                .for_each(|w, &g, b| {
                    let d = g + decay * *w;
                    *b = mom * *b + d;
                    *w -= lr * *b;
                });
        });
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub first: BTreeMap<String, ArrayD<T>>,
    pub second: BTreeMap<String, ArrayD<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, lr: f64, prefix: &str, layer: &mut dyn Layer<T>) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (lr_t, c1, c2, eps) = (T::of(lr), T::of(c1), T::of(c2), T::of(self.eps));
        let (first, second) = (&mut self.first, &mut self.second);
        layer.visit_mut(prefix, &mut |name, s| {
            let StateMut::Param(p) = s else { return };
            let m = first
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            let v = second
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *w -= lr_t * mh / (vh.sqrt() + eps);
                });
        });
    }
}
