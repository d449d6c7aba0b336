use ndarray::{Array4, Zip};

use super::{Cache, Layer, Mode};
use crate::ops::{resize_bilinear, resize_bilinear_backward};
use crate::{Float, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct Relu;

impl<T: Float> Layer<T> for Relu {
    fn forward(&mut self, x: Array4<T>, _mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        let y = self.infer(x)?;
        Ok((y.clone(), Cache::Output(y)))
    }

    fn infer(&self, mut x: Array4<T>) -> Result<Array4<T>> {
        x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        Ok(x)
    }

    fn backward(&mut self, cache: Cache<T>, mut dy: Array4<T>) -> Array4<T> {
        let Cache::Output(y) = cache else {
            panic!("relu backward needs its output");
        };
        Zip::from(&mut dy).and(&y).for_each(|d, &o| {
            if o <= T::zero() {
                *d = T::zero();
            }
        });
        dy
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LeakyRelu {
    pub slope: f64,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope }
    }
}

impl<T: Float> Layer<T> for LeakyRelu {
    fn forward(&mut self, x: Array4<T>, _mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        let y = self.infer(x.clone())?;
        Ok((y, Cache::Input(x)))
    }

    fn infer(&self, mut x: Array4<T>) -> Result<Array4<T>> {
        let s = T::of(self.slope);
        x.mapv_inplace(|v| if v > T::zero() { v } else { v * s });
        Ok(x)
    }

    fn backward(&mut self, cache: Cache<T>, mut dy: Array4<T>) -> Array4<T> {
        let Cache::Input(x) = cache else {
            panic!("leaky relu backward needs its input");
        };
        let s = T::of(self.slope);
        Zip::from(&mut dy).and(&x).for_each(|d, &v| {
            if v <= T::zero() {
                *d = *d * s;
            }
        });
        dy
    }
}

/// Bilinear upsampling by an integer factor (half-pixel centers).
#[derive(Clone, Copy, Debug)]
pub struct UpsampleBilinear {
    pub factor: usize,
}

impl<T: Float> Layer<T> for UpsampleBilinear {
    fn forward(&mut self, x: Array4<T>, _mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        let shape = x.dim();
        let y = self.infer(x)?;
        Ok((y, Cache::Shape(shape)))
    }

    fn infer(&self, x: Array4<T>) -> Result<Array4<T>> {
        let (_, _, h, w) = x.dim();
        Ok(resize_bilinear(&x, h * self.factor, w * self.factor))
    }

    fn backward(&mut self, cache: Cache<T>, dy: Array4<T>) -> Array4<T> {
        let Cache::Shape((_, _, h, w)) = cache else {
            panic!("upsample backward needs the input shape");
        };
        resize_bilinear_backward(&dy, h, w)
    }
}
