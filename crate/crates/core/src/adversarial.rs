//! Output-space discriminators and least-squares adversarial losses.

use ndarray::{Array4, ArrayD, ArrayView4};
use nightadapt_nn::layers::{Conv2d, LeakyRelu, Sequential};
use nightadapt_nn::{init, Cache, Float, Layer, Mode, StateMut, StateRef};
use rand::Rng;

use crate::types::LossGrad;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 4;
const PAD: usize = 1;

/// Five 4×4 convolutions (strides 2, 2, 1, 1, 1) with leaky ReLU between them.
pub struct Discriminator<T> {
    body: Sequential<T>,
    in_channels: usize,
}

/// Spatial output size for input size `n`.
pub fn output_size(n: usize) -> Option<usize> {
    let mut s = n;
    for stride in [2, 2, 1, 1, 1] {
        if s + 2 * PAD < KERNEL {
            return None;
        }
        s = (s + 2 * PAD - KERNEL) / stride + 1;
    }
    Some(s)
}

impl<T: Float> Discriminator<T> {
    /// `channels` are the four hidden widths; the last layer always has one output.
    pub fn new<R: Rng>(in_channels: usize, channels: [usize; 4], rng: &mut R) -> Self {
        let widths = [channels[0], channels[1], channels[2], channels[3], 1];
        let strides = [2, 2, 1, 1, 1];
        let mut body = Sequential::new();
        let mut cin = in_channels;
        for (i, (&cout, &stride)) in widths.iter().zip(strides.iter()).enumerate() {
            let fan_in = cin * KERNEL * KERNEL;
            let w: ArrayD<T> = init::fan_in_uniform(&[cout, cin, KERNEL, KERNEL], fan_in, rng);
            let b: ArrayD<T> = init::fan_in_uniform(&[cout], fan_in, rng);
            body.push(format!("conv{}", i + 1), Conv2d::from_parts(w, Some(b), stride, PAD));
            if i + 1 < widths.len() {
                body.push(format!("leaky{}", i + 1), LeakyRelu::new(LEAKY_SLOPE));
            }
            cin = cout;
        }
        Self { body, in_channels }
    }

    fn check(&self, x: &Array4<T>) -> nightadapt_nn::Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(nightadapt_nn::NnError::Shape(format!(
                "discriminator expects {} channels, got {c}",
                self.in_channels
            )));
        }
        if output_size(h).is_none_or(|s| s == 0) || output_size(w).is_none_or(|s| s == 0) {
            return Err(nightadapt_nn::NnError::Shape(format!("input {h}×{w} is too small for the discriminator")));
        }
        Ok(())
    }

    pub fn score(&self, p: Array4<T>) -> Result<Array4<T>> {
        Ok(self.infer(p)?)
    }
}

impl<T: Float> Layer<T> for Discriminator<T> {
    fn forward(&mut self, x: Array4<T>, mode: Mode) -> nightadapt_nn::Result<(Array4<T>, Cache<T>)> {
        self.check(&x)?;
        self.body.forward(x, mode)
    }

    fn infer(&self, x: Array4<T>) -> nightadapt_nn::Result<Array4<T>> {
        self.check(&x)?;
        self.body.infer(x)
    }

    fn backward(&mut self, cache: Cache<T>, dy: Array4<T>) -> Array4<T> {
        self.body.backward(cache, dy)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_, T>)) {
        self.body.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_, T>)) {
        self.body.visit_mut(prefix, f);
    }
}

/// `mean((d - target)^2)` and its gradient.
pub fn mse_to<T: Float>(d: ArrayView4<'_, T>, target: f64) -> LossGrad<T> {
    let n = d.len().max(1) as f64;
    let mut value = 0.0;
    let grad = d.mapv(|v| {
        let e = v.f64() - target;
        value += e * e;
        T::of(2.0 * e / n)
    });
    LossGrad { value: value / n, grad }
}

/// Generator adversarial loss: both target predictions should look like source.
/// Returns the value and the gradients wrt `d_day` and `d_night`.
pub fn gen_adv_loss<T: Float>(
    d_day: ArrayView4<'_, T>,
    d_night: ArrayView4<'_, T>,
    r: f64,
) -> (f64, Array4<T>, Array4<T>) {
    let a = mse_to(d_day, r);
    let b = mse_to(d_night, r);
    (a.value + b.value, a.grad, b.grad)
}

/// `½ mean((D(src) - r)²) + ½ mean((D(tgt) - f)²)` with gradients wrt both score grids.
pub fn disc_loss<T: Float>(
    d_src: ArrayView4<'_, T>,
    d_tgt: ArrayView4<'_, T>,
    r: f64,
    f: f64,
) -> Result<(f64, Array4<T>, Array4<T>)> {
    if r == f {
        return Err(Error::InvalidArgument("source and target labels must differ".into()));
    }
    let half = T::of(0.5);
    let a = mse_to(d_src, r);
    let b = mse_to(d_tgt, f);
    Ok((0.5 * (a.value + b.value), a.grad.mapv(|g| g * half), b.grad.mapv(|g| g * half)))
}
