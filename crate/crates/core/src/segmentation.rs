//! Segmentation networks and the weighted cross-entropy source loss.

use ndarray::{Array4, ArrayView3};
use nightadapt_nn::layers::{BatchNorm2d, Conv2d, Relu, Residual, Sequential, UpsampleBilinear};
use nightadapt_nn::ops::log_softmax_channels;
use nightadapt_nn::{Cache, Float, Layer, Mode, StateMut, StateRef};
use rand::Rng;

use crate::types::{LikelihoodMap, LossGrad, MapKind};
use crate::{Error, Result};

/// Floor applied inside every explicit logarithm of a probability.
pub const PROB_FLOOR: f64 = 1e-12;

/// A network mapping `B×3×H×W` images to `B×K×H×W` logits.
///
/// Any [`Layer`] with a fixed class count can serve as the segmentation
/// stage; the trainer only relies on this trait.
pub trait SegNet<T: Float>: Layer<T> {
    fn num_classes(&self) -> usize;

    /// Eval-mode logits.
    fn predict(&self, x: Array4<T>) -> Result<LikelihoodMap<T>> {
        let z = self.infer(x)?;
        Ok(LikelihoodMap::logits(z))
    }
}

fn cbr<T: Float, R: Rng>(seq: Sequential<T>, tag: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Sequential<T> {
    seq.with(format!("{tag}_conv"), Conv2d::new(cin, cout, 3, stride, 1, false, rng))
        .with(format!("{tag}_bn"), BatchNorm2d::new(cout))
        .with(format!("{tag}_relu"), Relu)
}

/// Small encoder–classifier: five 3×3 convolutions (two of stride 2), three
/// residual blocks at quarter resolution, a 1×1 classifier and ×4 bilinear
/// upsampling back to the input size.
pub struct DeskSegNet<T> {
    body: Sequential<T>,
    classes: usize,
}

impl<T: Float> DeskSegNet<T> {
    pub fn new<R: Rng>(classes: usize, width: usize, rng: &mut R) -> Self {
        let (w1, w2, w4) = (width, 2 * width, 4 * width);
        let mut body = Sequential::new();
        body = cbr(body, "enc1", 3, w1, 1, rng);
        body = cbr(body, "enc2", w1, w2, 2, rng);
        body = cbr(body, "enc3", w2, w2, 1, rng);
        body = cbr(body, "enc4", w2, w4, 2, rng);
        body = cbr(body, "enc5", w4, w4, 1, rng);
        for k in 0..3 {
            let block = Sequential::new()
                .with("conv1", Conv2d::new(w4, w4, 3, 1, 1, false, rng))
                .with("bn1", BatchNorm2d::new(w4))
                .with("relu", Relu)
                .with("conv2", Conv2d::new(w4, w4, 3, 1, 1, false, rng))
                .with("bn2", BatchNorm2d::new(w4));
            body.push(format!("res{}", k + 1), Residual::new(block));
            body.push(format!("res{}_relu", k + 1), Relu);
        }
        body.push("classifier", Conv2d::new(w4, classes, 1, 1, 0, true, rng));
        body.push("upsample", UpsampleBilinear { factor: 4 });
        Self { body, classes }
    }

    fn check(x: &Array4<T>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 || h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!(
                "segmentation expects 3×H×W with H, W multiples of 4, got {c}×{h}×{w}"
            )));
        }
        Ok(())
    }
}

impl<T: Float> Layer<T> for DeskSegNet<T> {
    fn forward(&mut self, x: Array4<T>, mode: Mode) -> nightadapt_nn::Result<(Array4<T>, Cache<T>)> {
        Self::check(&x).map_err(|e| nightadapt_nn::NnError::Shape(e.to_string()))?;
        self.body.forward(x, mode)
    }

    fn infer(&self, x: Array4<T>) -> nightadapt_nn::Result<Array4<T>> {
        Self::check(&x).map_err(|e| nightadapt_nn::NnError::Shape(e.to_string()))?;
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

impl<T: Float> SegNet<T> for DeskSegNet<T> {
    fn num_classes(&self) -> usize {
        self.classes
    }
}

/// `-(1/(N·K)) Σ w[gt] log P[gt]` over the `N` pixels whose label is not
/// `ignore`. The gradient is taken with respect to `map.data`, whichever kind
/// it holds.
pub fn weighted_ce<T: Float>(
    map: &LikelihoodMap<T>,
    gt: ArrayView3<'_, u8>,
    weights: &[f64],
    ignore: u8,
) -> Result<LossGrad<T>> {
    let (b, k, h, w) = map.data.dim();
    if gt.dim() != (b, h, w) {
        return Err(Error::Shape(format!("labels {:?} vs map {:?}", gt.dim(), map.data.dim())));
    }
    if weights.len() != k {
        return Err(Error::Shape(format!("{} weights for {k} classes", weights.len())));
    }
    let mut n = 0usize;
    for &l in gt.iter() {
        if l != ignore {
            if l as usize >= k {
                return Err(Error::InvalidArgument(format!("label {l} outside [0, {k})")));
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("every pixel is ignored".into()));
    }
    let norm = (n * k) as f64;
    let mut value = 0.0;
    let mut grad = Array4::<T>::zeros(map.data.raw_dim());
    match map.kind {
        MapKind::Logits => {
            let logp = log_softmax_channels(map.data.view());
            for bi in 0..b {
                for y in 0..h {
                    for x in 0..w {
                        let l = gt[[bi, y, x]];
                        if l == ignore {
                            continue;
                        }
                        let c = l as usize;
                        let wc = weights[c];
                        value -= wc * logp[[bi, c, y, x]].f64();
                        let s = wc / norm;
                        for j in 0..k {
                            let p = logp[[bi, j, y, x]].f64().exp();
                            let onehot = if j == c { 1.0 } else { 0.0 };
                            grad[[bi, j, y, x]] = T::of(s * (p - onehot));
                        }
                    }
                }
            }
        }
        MapKind::Probabilities => {
            for bi in 0..b {
                for y in 0..h {
                    for x in 0..w {
                        let l = gt[[bi, y, x]];
                        if l == ignore {
                            continue;
                        }
                        let c = l as usize;
                        let p = map.data[[bi, c, y, x]].f64();
                        value -= weights[c] * p.max(PROB_FLOOR).ln();
                        if p > PROB_FLOOR {
                            grad[[bi, c, y, x]] = T::of(-weights[c] / (norm * p));
                        }
                    }
                }
            }
        }
    }
    Ok(LossGrad { value: value / norm, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logits(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.random_range(-3.0..3.0))
    }

    fn labels(shape: (usize, usize, usize), k: u8, seed: u64) -> Array3<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || if rng.random_bool(0.2) { 255 } else { rng.random_range(0..k) })
    }

    #[test]
    fn output_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DeskSegNet::<f32>::new(19, 4, &mut rng);
        let x = Array4::from_shape_fn((1, 3, 64, 64), |(_, c, y, x)| ((c + y * x) % 7) as f32 / 7.0);
        let a = net.predict(x.clone()).unwrap();
        assert_eq!(a.data.dim(), (1, 19, 64, 64));
        assert_eq!(net.predict(x).unwrap(), a);
        let p = a.softmax();
        for s in p.data.sum_axis(ndarray::Axis(1)).iter() {
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn uniform_prediction_gives_log_k_over_k() {
        let z = Array4::<f64>::zeros((1, 4, 2, 2));
        let gt = Array3::from_shape_vec((1, 2, 2), vec![0, 1, 2, 3]).unwrap();
        let v = weighted_ce(&LikelihoodMap::logits(z), gt.view(), &[1.0; 4], 255).unwrap().value;
        assert!((v - 4f64.ln() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_is_near_zero() {
        let mut p = Array4::<f64>::from_elem((1, 2, 1, 2), 1e-12);
        p[[0, 0, 0, 0]] = 1.0 - 1e-12;
        p[[0, 1, 0, 1]] = 1.0 - 1e-12;
        let gt = Array3::from_shape_vec((1, 1, 2), vec![0, 1]).unwrap();
        let map = LikelihoodMap::probabilities(p).unwrap();
        assert!(weighted_ce(&map, gt.view(), &[1.0, 1.0], 255).unwrap().value < 1e-11);
    }

    #[test]
    fn all_ignored_is_degenerate() {
        let z = Array4::<f64>::zeros((1, 3, 2, 2));
        let gt = Array3::from_elem((1, 2, 2), 255u8);
        let err = weighted_ce(&LikelihoodMap::logits(z), gt.view(), &[1.0; 3], 255).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn logits_and_probability_paths_agree() {
        let z = logits((2, 5, 3, 3), 4);
        let gt = labels((2, 3, 3), 5, 5);
        let w = [0.9, 1.1, 1.0, 0.95, 1.05];
        let a = weighted_ce(&LikelihoodMap::logits(z.clone()), gt.view(), &w, 255).unwrap().value;
        let b = weighted_ce(&LikelihoodMap::logits(z).softmax(), gt.view(), &w, 255).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scaling_weights_scales_loss(seed in 0u64..500, c in 0.1f64..10.0) {
            let z = logits((1, 4, 3, 3), seed);
            let gt = labels((1, 3, 3), 4, seed + 9);
            prop_assume!(gt.iter().any(|&l| l != 255));
            let w = [0.9, 1.2, 1.0, 0.8];
            let wc: Vec<f64> = w.iter().map(|v| v * c).collect();
            let map = LikelihoodMap::logits(z);
            let a = weighted_ce(&map, gt.view(), &w, 255).unwrap().value;
            let b = weighted_ce(&map, gt.view(), &wc, 255).unwrap().value;
            prop_assert!((b - c * a).abs() <= 1e-12 * b.abs().max(1.0));
        }

        #[test]
        fn permutation_equivariance(seed in 0u64..500) {
            let z = logits((1, 4, 3, 3), seed);
            let gt = labels((1, 3, 3), 4, seed + 3);
            prop_assume!(gt.iter().any(|&l| l != 255));
            let w = [0.9, 1.2, 1.0, 0.8];
            let perm = [2usize, 0, 3, 1];
            let zp = Array4::from_shape_fn(z.dim(), |(b, c, y, x)| z[[b, perm[c], y, x]]);
            let inv = |l: u8| if l == 255 { 255 } else { perm.iter().position(|&p| p == l as usize).unwrap() as u8 };
            let gtp = gt.mapv(inv);
            let wp: Vec<f64> = perm.iter().map(|&p| w[p]).collect();
            let a = weighted_ce(&LikelihoodMap::logits(z), gt.view(), &w, 255).unwrap().value;
            let b = weighted_ce(&LikelihoodMap::logits(zp), gtp.view(), &wp, 255).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
