//! The residual relighting network and its light loss.

pub mod loss;

pub use loss::{exposure_loss, light_loss, ssim_loss, tv_loss, LightLossTerms};

use ndarray::Array4;
use nightadapt_nn::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Relu, Residual, Sequential};
use nightadapt_nn::{Cache, Float, Layer, Mode, StateMut, StateRef};
use rand::Rng;

use crate::{Error, Result};

fn conv_bn_relu<T: Float, R: Rng>(seq: Sequential<T>, tag: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Sequential<T> {
    seq.with(format!("{tag}_conv"), Conv2d::new(cin, cout, 3, stride, 1, false, rng))
        .with(format!("{tag}_bn"), BatchNorm2d::new(cout))
        .with(format!("{tag}_relu"), Relu)
}

fn residual_block<T: Float, R: Rng>(ch: usize, rng: &mut R) -> Residual<T> {
    Residual::new(
        Sequential::new()
            .with("conv1", Conv2d::new(ch, ch, 3, 1, 1, false, rng))
            .with("bn1", BatchNorm2d::new(ch))
            .with("relu", Relu)
            .with("conv2", Conv2d::new(ch, ch, 3, 1, 1, false, rng))
            .with("bn2", BatchNorm2d::new(ch)),
    )
}

/// `R = I + body(I)`: four convolutions (strides 1, 2, 2, 1), three residual
/// blocks, two stride-2 transposed convolutions and a zero-initialised 3×3
/// output convolution.
pub struct RelightNet<T> {
    body: Sequential<T>,
    width: usize,
}

impl<T: Float> RelightNet<T> {
    /// `width` is the channel count of the first stage; later stages use 2× and 4×.
    pub fn new<R: Rng>(width: usize, rng: &mut R) -> Self {
        let (w1, w2, w4) = (width, 2 * width, 4 * width);
        let mut body = Sequential::new();
        body = conv_bn_relu(body, "enc1", 3, w1, 1, rng);
        body = conv_bn_relu(body, "enc2", w1, w2, 2, rng);
        body = conv_bn_relu(body, "enc3", w2, w4, 2, rng);
        body = conv_bn_relu(body, "enc4", w4, w4, 1, rng);
        for k in 0..3 {
            body.push(format!("res{}", k + 1), residual_block(w4, rng));
        }
        body = body
            .with("dec1_tconv", ConvTranspose2d::new(w4, w2, 3, 2, 1, 1, false, rng))
            .with("dec1_bn", BatchNorm2d::new(w2))
            .with("dec1_relu", Relu)
            .with("dec2_tconv", ConvTranspose2d::new(w2, w1, 3, 2, 1, 1, false, rng))
            .with("dec2_bn", BatchNorm2d::new(w1))
            .with("dec2_relu", Relu);
        let mut out = Conv2d::new(w1, 3, 3, 1, 1, true, rng);
        out.weight.value.fill(T::zero());
        if let Some(b) = out.bias.as_mut() {
            b.value.fill(T::zero());
        }
        body.push("out", out);
        Self { body, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check(x: &Array4<T>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 {
            return Err(Error::Shape(format!("relighting expects 3 channels, got {c}")));
        }
        if h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!(
                "relighting needs H and W to be positive multiples of 4, got {h}×{w}"
            )));
        }
        Ok(())
    }

    /// Training forward pass; `R` is not clamped.
    pub fn run(&mut self, x: Array4<T>, mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        Self::check(&x)?;
        let (res, cache) = self.body.forward(x.clone(), mode)?;
        Ok((x + res, cache))
    }

    /// Evaluation-mode relighting.
    pub fn relight(&self, x: Array4<T>) -> Result<Array4<T>> {
        Self::check(&x)?;
        let res = self.body.infer(x.clone())?;
        Ok(x + res)
    }
}

impl<T: Float> Layer<T> for RelightNet<T> {
    fn forward(&mut self, x: Array4<T>, mode: Mode) -> nightadapt_nn::Result<(Array4<T>, Cache<T>)> {
        self.run(x, mode).map_err(|e| nightadapt_nn::NnError::Shape(e.to_string()))
    }

    fn infer(&self, x: Array4<T>) -> nightadapt_nn::Result<Array4<T>> {
        self.relight(x).map_err(|e| nightadapt_nn::NnError::Shape(e.to_string()))
    }

    fn backward(&mut self, cache: Cache<T>, dy: Array4<T>) -> Array4<T> {
        let dx = self.body.backward(cache, dy.clone());
        dx + dy
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_, T>)) {
        self.body.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_, T>)) {
        self.body.visit_mut(prefix, f);
    }
}
