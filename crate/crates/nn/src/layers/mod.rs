//! Layers with explicit caches.
//!
//! `forward` returns the output together with whatever the backward pass
//! needs, so several forward passes through the same weights can be in
//! flight at once (one per domain batch) and be back-propagated in any order.
//! `backward` accumulates parameter gradients into [`Param::grad`](crate::Param)
//! and returns the gradient with respect to the layer input.

mod act;
mod conv;
mod norm;

pub use act::{LeakyRelu, Relu, UpsampleBilinear};
pub use conv::{Conv2d, ConvTranspose2d};
pub use norm::BatchNorm2d;

use ndarray::Array4;

use crate::param::join;
use crate::{Float, Result, StateMut, StateRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Saved activations for one forward pass through one layer.
#[derive(Debug)]
pub enum Cache<T> {
    Empty,
    Input(Array4<T>),
    Output(Array4<T>),
    Shape((usize, usize, usize, usize)),
    Norm {
        xhat: Array4<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Seq(Vec<Cache<T>>),
}

pub trait Layer<T: Float>: Send + Sync {
    /// Forward pass. In [`Mode::Train`] normalization layers use and update
    /// batch statistics.
    fn forward(&mut self, x: Array4<T>, mode: Mode) -> Result<(Array4<T>, Cache<T>)>;

    /// Evaluation-mode forward without caches; callable concurrently.
    fn infer(&self, x: Array4<T>) -> Result<Array4<T>>;

    fn backward(&mut self, cache: Cache<T>, dy: Array4<T>) -> Array4<T>;

    fn visit(&self, _prefix: &str, _f: &mut dyn FnMut(&str, StateRef<'_, T>)) {}

    fn visit_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, StateMut<'_, T>)) {}
}

/// Named layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    layers: Vec<(String, Box<dyn Layer<T>>)>,
}

impl<T: Float> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn with(mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) -> Self {
        self.push(name, layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Float> Layer<T> for Sequential<T> {
    fn forward(&mut self, mut x: Array4<T>, mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        for (_, layer) in &mut self.layers {
            let (y, c) = layer.forward(x, mode)?;
            caches.push(c);
            x = y;
        }
        Ok((x, Cache::Seq(caches)))
    }

    fn infer(&self, mut x: Array4<T>) -> Result<Array4<T>> {
        for (_, layer) in &self.layers {
            x = layer.infer(x)?;
        }
        Ok(x)
    }

    fn backward(&mut self, cache: Cache<T>, mut dy: Array4<T>) -> Array4<T> {
        let Cache::Seq(caches) = cache else {
            panic!("sequential backward needs a sequence cache");
        };
        assert_eq!(caches.len(), self.layers.len(), "cache/layer count mismatch");
        for ((_, layer), c) in self.layers.iter_mut().zip(caches).rev() {
            dy = layer.backward(c, dy);
        }
        dy
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_, T>)) {
        for (name, layer) in &self.layers {
            layer.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_, T>)) {
        for (name, layer) in &mut self.layers {
            layer.visit_mut(&join(prefix, name), f);
        }
    }
}

/// `y = x + body(x)`.
pub struct Residual<T> {
    body: Sequential<T>,
}

impl<T: Float> Residual<T> {
    pub fn new(body: Sequential<T>) -> Self {
        Self { body }
    }
}

impl<T: Float> Layer<T> for Residual<T> {
    fn forward(&mut self, x: Array4<T>, mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        let (mut y, c) = self.body.forward(x.clone(), mode)?;
        if y.dim() != x.dim() {
            return Err(crate::NnError::Shape(format!(
                "residual body changed shape {:?} -> {:?}",
                x.dim(),
                y.dim()
            )));
        }
        y += &x;
        Ok((y, c))
    }

    fn infer(&self, x: Array4<T>) -> Result<Array4<T>> {
        let mut y = self.body.infer(x.clone())?;
        y += &x;
        Ok(y)
    }

    fn backward(&mut self, cache: Cache<T>, dy: Array4<T>) -> Array4<T> {
        let mut dx = self.body.backward(cache, dy.clone());
        dx += &dy;
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_, T>)) {
        self.body.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_, T>)) {
        self.body.visit_mut(prefix, f);
    }
}

/// Zeroes every parameter gradient reachable from `layer`.
pub fn zero_grad<T: Float>(layer: &mut dyn Layer<T>) {
    layer.visit_mut("", &mut |_, s| {
        if let StateMut::Param(p) = s {
            p.zero_grad();
        }
    });
}

/// Total number of trainable scalars.
pub fn param_count<T: Float>(layer: &dyn Layer<T>) -> usize {
    let mut n = 0;
    layer.visit("", &mut |_, s| {
        if let StateRef::Param(p) = s {
            n += p.len();
        }
    });
    n
}
