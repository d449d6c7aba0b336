//! Light loss: total variation, exposure control and structural similarity.
//!
//! Every loss returns its value and the gradient with respect to the
//! relighted image `R`. Sums are accumulated in `f64` regardless of `T`.

use ndarray::{Array4, ArrayView4};
use nightadapt_nn::Float;
use serde::Serialize;

use crate::types::LossGrad;
use crate::{Error, Result};

/// Side length of the exposure pooling cells.
pub const EXPOSURE_PATCH: usize = 32;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LightLossTerms {
    pub l_tv: f64,
    pub l_exp: f64,
    pub l_ssim: f64,
    pub l_light: f64,
}

impl LightLossTerms {
    pub fn combine(l_tv: f64, l_exp: f64, l_ssim: f64, alpha: (f64, f64, f64)) -> Self {
        Self {
            l_tv,
            l_exp,
            l_ssim,
            l_light: alpha.0 * l_tv + alpha.1 * l_exp + alpha.2 * l_ssim,
        }
    }
}

fn same_shape<T: Float>(i: &ArrayView4<'_, T>, r: &ArrayView4<'_, T>) -> Result<()> {
    if i.dim() != r.dim() {
        return Err(Error::Shape(format!("I is {:?} but R is {:?}", i.dim(), r.dim())));
    }
    Ok(())
}

/// Mean squared forward difference of `I - R`, divided by the element count.
pub fn tv_loss<T: Float>(i: ArrayView4<'_, T>, r: ArrayView4<'_, T>) -> Result<LossGrad<T>> {
    same_shape(&i, &r)?;
    let (b, c, h, w) = i.dim();
    let n = i.len().max(1) as f64;
    let d = |bi, ci, y, x| i[[bi, ci, y, x]].f64() - r[[bi, ci, y, x]].f64();
    let mut value = 0.0;
    let mut gd = vec![0.0f64; i.len()];
    let at = |bi: usize, ci: usize, y: usize, x: usize| ((bi * c + ci) * h + y) * w + x;
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let here = d(bi, ci, y, x);
                    if x + 1 < w {
                        let dx = d(bi, ci, y, x + 1) - here;
                        value += dx * dx;
                        gd[at(bi, ci, y, x + 1)] += 2.0 * dx / n;
                        gd[at(bi, ci, y, x)] -= 2.0 * dx / n;
                    }
                    if y + 1 < h {
                        let dy = d(bi, ci, y + 1, x) - here;
                        value += dy * dy;
                        gd[at(bi, ci, y + 1, x)] += 2.0 * dy / n;
                        gd[at(bi, ci, y, x)] -= 2.0 * dy / n;
                    }
                }
            }
        }
    }
    // the loss depends on R through D = I - R
    let grad = Array4::from_shape_vec(i.raw_dim(), gd.into_iter().map(|g| T::of(-g)).collect())
        .expect("shape");
    Ok(LossGrad { value: value / n, grad })
}

/// Mean absolute deviation of 32×32 cell means from the target exposure `e`.
pub fn exposure_loss<T: Float>(r: ArrayView4<'_, T>, e: f64) -> Result<LossGrad<T>> {
    exposure_loss_with_patch(r, e, EXPOSURE_PATCH)
}

/// [`exposure_loss`] with a configurable cell size.
pub fn exposure_loss_with_patch<T: Float>(r: ArrayView4<'_, T>, e: f64, patch: usize) -> Result<LossGrad<T>> {
    let (b, c, h, w) = r.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "exposure pooling needs H and W divisible by {patch}, got {h}×{w}"
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let m = (b * c * ph * pw) as f64;
    let area = (patch * patch) as f64;
    let mut value = 0.0;
    let mut grad = Array4::<T>::zeros(r.raw_dim());
    for bi in 0..b {
        for ci in 0..c {
            for py in 0..ph {
                for px in 0..pw {
                    let cell = r.slice(ndarray::s![
                        bi,
                        ci,
                        py * patch..(py + 1) * patch,
                        px * patch..(px + 1) * patch
                    ]);
                    // summing deviations keeps a constant field at exactly zero
                    let dev = cell.iter().map(|v| v.f64() - e).sum::<f64>() / area;
                    value += dev.abs();
                    let g = T::of(sign(dev) / (m * area));
                    grad.slice_mut(ndarray::s![
                        bi,
                        ci,
                        py * patch..(py + 1) * patch,
                        px * patch..(px + 1) * patch
                    ])
                    .fill(g);
                }
            }
        }
    }
    Ok(LossGrad { value: value / m, grad })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean of `(1 - SSIM) / 2` over all valid 3×3 windows and channels.
pub fn ssim_loss<T: Float>(i: ArrayView4<'_, T>, r: ArrayView4<'_, T>) -> Result<LossGrad<T>> {
    same_shape(&i, &r)?;
    let (b, c, h, w) = i.dim();
    if h < 3 || w < 3 {
        return Err(Error::Shape(format!("SSIM needs at least 3×3 images, got {h}×{w}")));
    }
    let (vh, vw) = (h - 2, w - 2);
    let count = (b * c * vh * vw) as f64;
    let g = -0.5 / count;
    let mut value = 0.0;
    let mut grad = Array4::<T>::zeros(r.raw_dim());
    // per-window coefficients of dS/dy_q = a + b*y_q + c*x_q
    let mut ca = vec![0.0f64; vh * vw];
    let mut cb = vec![0.0f64; vh * vw];
    let mut cc = vec![0.0f64; vh * vw];
    for bi in 0..b {
        for ci in 0..c {
            let x = i.slice(ndarray::s![bi, ci, .., ..]);
            let y = r.slice(ndarray::s![bi, ci, .., ..]);
            for wy in 0..vh {
                for wx in 0..vw {
                    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let a = x[[wy + dy, wx + dx]].f64();
                            let q = y[[wy + dy, wx + dx]].f64();
                            sx += a;
                            sy += q;
                            sxx += a * a;
                            syy += q * q;
                            sxy += a * q;
                        }
                    }
                    let (mx, my) = (sx / 9.0, sy / 9.0);
                    let (mxx, myy, mxy) = (sxx / 9.0, syy / 9.0, sxy / 9.0);
                    let a1 = 2.0 * mx * my + SSIM_C1;
                    let a2 = 2.0 * (mxy - mx * my) + SSIM_C2;
                    let b1 = mx * mx + my * my + SSIM_C1;
                    let b2 = (mxx - mx * mx) + (myy - my * my) + SSIM_C2;
                    let s = a1 * a2 / (b1 * b2);
                    value += (1.0 - s) / 2.0;
                    let d_my = (2.0 * mx * a2 - 2.0 * mx * a1) / (b1 * b2) - s * 2.0 * my / b1
                        + s * 2.0 * my / b2;
                    let d_mxy = 2.0 * a1 / (b1 * b2);
                    let d_myy = -s / b2;
                    let k = wy * vw + wx;
                    ca[k] = g * d_my / 9.0;
                    cb[k] = g * d_myy * 2.0 / 9.0;
                    cc[k] = g * d_mxy / 9.0;
                }
            }
            for qy in 0..h {
                for qx in 0..w {
                    let (mut a, mut bb, mut cx) = (0.0, 0.0, 0.0);
                    for wy in qy.saturating_sub(2)..=qy.min(vh - 1) {
                        for wx in qx.saturating_sub(2)..=qx.min(vw - 1) {
                            let k = wy * vw + wx;
                            a += ca[k];
                            bb += cb[k];
                            cx += cc[k];
                        }
                    }
                    let d = a + bb * y[[qy, qx]].f64() + cx * x[[qy, qx]].f64();
                    grad[[bi, ci, qy, qx]] = T::of(d);
                }
            }
        }
    }
    Ok(LossGrad { value: value / count, grad })
}

/// Weighted sum of the three light-loss components and its gradient wrt `R`.
pub fn light_loss<T: Float>(
    i: ArrayView4<'_, T>,
    r: ArrayView4<'_, T>,
    e: f64,
    alpha: (f64, f64, f64),
) -> Result<(LightLossTerms, Array4<T>)> {
    let tv = tv_loss(i, r)?;
    let exp = exposure_loss(r, e)?;
    let ssim = ssim_loss(i, r)?;
    let terms = LightLossTerms::combine(tv.value, exp.value, ssim.value, alpha);
    let (a0, a1, a2) = (T::of(alpha.0), T::of(alpha.1), T::of(alpha.2));
    let mut grad = tv.grad;
    ndarray::Zip::from(&mut grad)
        .and(&exp.grad)
        .and(&ssim.grad)
        .for_each(|g, &e, &s| *g = a0 * *g + a1 * e + a2 * s);
    Ok((terms, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.random_range(0.0..1.0))
    }

    #[test]
    fn tv_hand_example() {
        let i = Array4::from_shape_vec((1, 1, 2, 2), vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let r = Array4::<f64>::zeros((1, 1, 2, 2));
        assert_eq!(tv_loss(i.view(), r.view()).unwrap().value, 0.5);
    }

    #[test]
    fn tv_of_constant_shift_is_zero() {
        let i = random((1, 3, 8, 8), 1);
        let r = &i + 0.3;
        assert!(tv_loss(i.view(), r.view()).unwrap().value.abs() < 1e-24);
    }

    #[test]
    fn exposure_examples() {
        let r = Array4::from_elem((1, 3, 64, 64), 0.2f64);
        assert!((exposure_loss(r.view(), 0.5).unwrap().value - 0.3).abs() < 1e-12);
        assert_eq!(exposure_loss(r.view(), 0.2).unwrap().value, 0.0);
        let bad = Array4::<f64>::zeros((1, 3, 48, 64));
        assert!(exposure_loss(bad.view(), 0.5).is_err());
    }

    #[test]
    fn ssim_identity_is_zero_and_small_images_fail() {
        let i = random((2, 3, 6, 5), 2);
        assert!(ssim_loss(i.view(), i.view()).unwrap().value.abs() < 1e-12);
        let tiny = Array4::<f64>::zeros((1, 1, 2, 5));
        assert!(ssim_loss(tiny.view(), tiny.view()).is_err());
    }

    #[test]
    fn light_loss_weights() {
        let t = LightLossTerms::combine(0.1, 0.2, 0.05, (10.0, 1.0, 1.0));
        assert!((t.l_light - 1.25).abs() < 1e-12);
    }

    #[test]
    fn light_loss_zero_at_identity_with_matching_exposure() {
        let i = Array4::from_elem((1, 3, 32, 32), 0.4f64);
        let (t, g) = light_loss(i.view(), i.view(), 0.4, (10.0, 1.0, 1.0)).unwrap();
        assert_eq!(t.l_light, 0.0);
        assert!(g.iter().all(|&v| v.abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn tv_is_translation_invariant(seed in 0u64..1000, shift in -2.0f64..2.0) {
            let i = random((1, 2, 5, 4), seed);
            let r = random((1, 2, 5, 4), seed + 1);
            let a = tv_loss(i.view(), r.view()).unwrap().value;
            let b = tv_loss((&i + shift).view(), (&r + shift).view()).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn ssim_loss_lies_in_unit_interval(seed in 0u64..1000) {
            let i = random((1, 2, 5, 6), seed);
            let r = random((1, 2, 5, 6), seed ^ 77).mapv(|v| 2.0 * v - 1.0);
            let v = ssim_loss(i.view(), r.view()).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn exposure_zero_iff_cells_hit_target(seed in 0u64..1000, e in 0.0f64..1.0) {
            // every cell is a zero-mean perturbation of e
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = Array4::from_elem((1, 1, 4, 4), e);
            for cy in 0..2 {
                for cx in 0..2 {
                    let d: f64 = rng.random_range(-0.1..0.1);
                    r[[0, 0, 2 * cy, 2 * cx]] += d;
                    r[[0, 0, 2 * cy + 1, 2 * cx + 1]] -= d;
                }
            }
            prop_assert!(exposure_loss_with_patch(r.view(), e, 2).unwrap().value < 1e-12);
            r[[0, 0, 0, 0]] += 0.05;
            prop_assert!(exposure_loss_with_patch(r.view(), e, 2).unwrap().value > 0.0);
        }
    }
}
