use ndarray::{Array4, ArrayD, IxDyn};

use super::{Cache, Layer, Mode};
use crate::param::join;
use crate::{exec, Float, NnError, Param, Result, StateMut, StateRef};

/// Per-channel batch normalization over `(B, H, W)`.
///
/// Training mode normalizes with the biased batch variance and folds the
/// unbiased variance into the running estimate, like the usual framework
/// implementations.
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: ArrayD<T>,
    pub running_var: ArrayD<T>,
    momentum: f64,
    eps: f64,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        let ones = ArrayD::from_elem(IxDyn(&[channels]), T::one());
        let zeros = ArrayD::zeros(IxDyn(&[channels]));
        Self {
            gamma: Param::new(ones.clone(), false),
            beta: Param::new(zeros.clone(), false),
            running_mean: zeros,
            running_var: ones,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Array4<T>) -> Result<()> {
        if x.dim().1 != self.channels() {
            return Err(NnError::Shape(format!(
                "batch norm over {} channels got {}",
                self.channels(),
                x.dim().1
            )));
        }
        Ok(())
    }

    /// Normalizes `x` with per-channel `mean`/`inv_std`, returning `(y, xhat)`.
    fn apply(&self, x: &Array4<T>, mean: &[T], inv_std: &[T]) -> (Array4<T>, Array4<T>) {
        let (_, c, h, w) = x.dim();
        let hw = h * w;
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let beta = self.beta.value.as_slice().expect("contiguous");
        let mut xhat = x.as_standard_layout().into_owned();
        exec::for_each_chunk_mut(xhat.as_slice_mut().expect("fresh"), hw, |i, plane| {
            let ch = i % c;
            let (m, s) = (mean[ch], inv_std[ch]);
            for v in plane {
                *v = (*v - m) * s;
            }
        });
        let mut y = xhat.clone();
        exec::for_each_chunk_mut(y.as_slice_mut().expect("fresh"), hw, |i, plane| {
            let ch = i % c;
            let (g, b) = (gamma[ch], beta[ch]);
            for v in plane {
                *v = *v * g + b;
            }
        });
        (y, xhat)
    }

    fn batch_stats(x: &Array4<T>) -> (Vec<T>, Vec<T>) {
        let (b, c, h, w) = x.dim();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let hw = h * w;
        let count = (b * hw) as f64;
        let stats = exec::map_range(c, |ch| {
            let mut sum = 0.0f64;
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                sum += xs[off..off + hw].iter().map(|v| v.f64()).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                sq += xs[off..off + hw]
                    .iter()
                    .map(|v| {
                        let d = v.f64() - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            (mean, sq / count)
        });
        stats
            .into_iter()
            .map(|(m, v)| (T::of(m), T::of(v)))
            .unzip()
    }
}

impl<T: Float> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: Array4<T>, mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        self.check(&x)?;
        match mode {
            Mode::Eval => {
                let (mean, inv_std) = self.running();
                let (y, xhat) = self.apply(&x, &mean, &inv_std);
                Ok((
                    y,
                    Cache::Norm {
                        xhat,
                        inv_std,
                        batch_stats: false,
                    },
                ))
            }
            Mode::Train => {
                let (b, _, h, w) = x.dim();
                let n = (b * h * w) as f64;
                let (mean, var) = Self::batch_stats(&x);
                let eps = self.eps;
                let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v.f64() + eps).sqrt())).collect();
                let (y, xhat) = self.apply(&x, &mean, &inv_std);
                let m = T::of(self.momentum);
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for (rm, &bm) in self.running_mean.iter_mut().zip(&mean) {
                    *rm = (T::one() - m) * *rm + m * bm;
                }
                for (rv, &bv) in self.running_var.iter_mut().zip(&var) {
                    *rv = (T::one() - m) * *rv + m * T::of(bv.f64() * unbias);
                }
                Ok((
                    y,
                    Cache::Norm {
                        xhat,
                        inv_std,
                        batch_stats: true,
                    },
                ))
            }
        }
    }

    fn infer(&self, x: Array4<T>) -> Result<Array4<T>> {
        self.check(&x)?;
        let (mean, inv_std) = self.running();
        Ok(self.apply(&x, &mean, &inv_std).0)
    }

    fn backward(&mut self, cache: Cache<T>, dy: Array4<T>) -> Array4<T> {
        let Cache::Norm {
            xhat,
            inv_std,
            batch_stats,
        } = cache
        else {
            panic!("batch norm backward needs its normalization cache");
        };
        let (b, c, h, w) = xhat.dim();
        let hw = h * w;
        let n = (b * hw) as f64;
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let xs = xhat.as_slice().expect("cached xhat is standard");
        let sums = exec::map_range(c, |ch| {
            let (mut s_dy, mut s_dyx) = (0.0f64, 0.0f64);
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for (d, xh) in dys[off..off + hw].iter().zip(&xs[off..off + hw]) {
                    s_dy += d.f64();
                    s_dyx += d.f64() * xh.f64();
                }
            }
            (s_dy, s_dyx)
        });
        for (ch, &(s_dy, s_dyx)) in sums.iter().enumerate() {
            self.gamma.grad[ch] += T::of(s_dyx);
            self.beta.grad[ch] += T::of(s_dy);
        }
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let mut dx = Array4::<T>::zeros((b, c, h, w));
        exec::for_each_chunk_mut(dx.as_slice_mut().expect("fresh"), hw, |i, plane| {
            let ch = i % c;
            let off = i * hw;
            let scale = gamma[ch] * inv_std[ch];
            if batch_stats {
                let (s_dy, s_dyx) = sums[ch];
                let mean_dy = T::of(s_dy / n);
                let mean_dyx = T::of(s_dyx / n);
                for (k, v) in plane.iter_mut().enumerate() {
                    *v = scale * (dys[off + k] - mean_dy - xs[off + k] * mean_dyx);
                }
            } else {
                for (k, v) in plane.iter_mut().enumerate() {
                    *v = scale * dys[off + k];
                }
            }
        });
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_, T>)) {
        f(&join(prefix, "gamma"), StateRef::Param(&self.gamma));
        f(&join(prefix, "beta"), StateRef::Param(&self.beta));
        f(&join(prefix, "running_mean"), StateRef::Buffer(&self.running_mean));
        f(&join(prefix, "running_var"), StateRef::Buffer(&self.running_var));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_, T>)) {
        f(&join(prefix, "gamma"), StateMut::Param(&mut self.gamma));
        f(&join(prefix, "beta"), StateMut::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), StateMut::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), StateMut::Buffer(&mut self.running_var));
    }
}

impl<T: Float> BatchNorm2d<T> {
    fn running(&self) -> (Vec<T>, Vec<T>) {
        let mean = self.running_mean.iter().copied().collect();
        let inv_std = self
            .running_var
            .iter()
            .map(|v| T::of(1.0 / (v.f64() + self.eps).sqrt()))
            .collect();
        (mean, inv_std)
    }
}
