//! Pseudo labels from the daytime prediction and the static loss on the
//! paired nighttime prediction.
//!
//! Static-category probabilities are the full softmax sliced to the static
//! channels, so they are addressed here by their ordinary class index.

use ndarray::{Array3, Array4, ArrayView3, ArrayView4};
use nightadapt_nn::Float;

use crate::config::StaticLossKind;
use crate::labels::LabelSet;
use crate::reweight::ClassWeights;
use crate::segmentation::PROB_FLOOR;
use crate::types::LossGrad;
use crate::{Error, Result};

/// Re-weighted argmax of `p_td` over the static categories only.
///
/// Pixels where `valid` is false become `ignore_index`. The result carries
/// no gradient.
pub fn make_pseudo_label<T: Float>(
    p_td: ArrayView4<'_, T>,
    w: &ClassWeights,
    labels: &LabelSet,
    valid: Option<ArrayView3<'_, bool>>,
) -> Result<Array3<u8>> {
    let (b, k, h, wd) = p_td.dim();
    if k != labels.len() || w.len() != k {
        return Err(Error::Shape(format!(
            "map has {k} channels, label set {} and weights {}",
            labels.len(),
            w.len()
        )));
    }
    if let Some(v) = &valid {
        if v.dim() != (b, h, wd) {
            return Err(Error::Shape("validity mask does not match the map".into()));
        }
    }
    let stat = labels.static_indices();
    if stat.is_empty() {
        return Err(Error::InvalidArgument("label set has no static categories".into()));
    }
    let ignore = labels.ignore_index();
    Ok(Array3::from_shape_fn((b, h, wd), |(bi, y, x)| {
        if valid.as_ref().is_some_and(|v| !v[[bi, y, x]]) {
            return ignore;
        }
        let mut best = stat[0];
        let mut best_v = f64::NEG_INFINITY;
        for &c in &stat {
            let v = w.w[c] * p_td[[bi, c, y, x]].f64();
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        best as u8
    }))
}

/// Locally matched probability: for each pixel, the largest probability at
/// that pixel among the classes labelled anywhere in its 3×3 window
/// (truncated at borders). Also returns the class attaining it; pixels
/// whose window holds no valid label get probability 0 and class `ignore`.
pub fn local_match_prob<T: Float>(
    p_tn: ArrayView4<'_, T>,
    pseudo: ArrayView3<'_, u8>,
    ignore: u8,
) -> Result<(Array3<f64>, Array3<u8>)> {
    let (b, k, h, w) = p_tn.dim();
    if pseudo.dim() != (b, h, w) {
        return Err(Error::Shape(format!("pseudo label {:?} vs map {:?}", pseudo.dim(), p_tn.dim())));
    }
    let mut prob = Array3::<f64>::zeros((b, h, w));
    let mut arg = Array3::<u8>::from_elem((b, h, w), ignore);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::NEG_INFINITY;
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        let c = pseudo[[bi, yy, xx]];
                        if c == ignore || c as usize >= k {
                            continue;
                        }
                        let v = p_tn[[bi, c as usize, y, x]].f64();
                        if v > best {
                            best = v;
                            arg[[bi, y, x]] = c;
                        }
                    }
                }
                if best > f64::NEG_INFINITY {
                    prob[[bi, y, x]] = best;
                }
            }
        }
    }
    Ok((prob, arg))
}

fn focal_factor(q: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (1.0 - q).max(0.0).powf(gamma)
    }
}

fn focal_factor_deriv(q: f64, gamma: f64) -> f64 {
    // d/dq (1-q)^γ
    if gamma == 0.0 {
        0.0
    } else if gamma == 1.0 {
        -1.0
    } else {
        -gamma * (1.0 - q).max(0.0).powf(gamma - 1.0)
    }
}

/// Static loss of the night probabilities `p_tn` against `pseudo`.
///
/// The gradient is with respect to `p_tn` (probabilities); only static
/// channels named by the pseudo labels receive gradient.
pub fn static_loss<T: Float>(
    p_tn: ArrayView4<'_, T>,
    pseudo: ArrayView3<'_, u8>,
    gamma: f64,
    kind: StaticLossKind,
    ignore: u8,
) -> Result<LossGrad<T>> {
    let (b, k, h, w) = p_tn.dim();
    if pseudo.dim() != (b, h, w) {
        return Err(Error::Shape(format!("pseudo label {:?} vs map {:?}", pseudo.dim(), p_tn.dim())));
    }
    let mut grad = Array4::<T>::zeros(p_tn.raw_dim());
    if kind == StaticLossKind::None {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let n = pseudo.iter().filter(|&&c| c != ignore && (c as usize) < k).count();
    if n == 0 {
        return Err(Error::Degenerate("no valid pseudo-label pixels".into()));
    }
    let nf = n as f64;
    let windowed = matches!(kind, StaticLossKind::Windowed | StaticLossKind::Matched);
    let (prob, arg) = if windowed {
        local_match_prob(p_tn, pseudo, ignore)?
    } else {
        (Array3::zeros((0, 0, 0)), Array3::zeros((0, 0, 0)))
    };
    let mut value = 0.0;
    let add = |bi: usize, c: usize, y: usize, x: usize, g: f64, grad: &mut Array4<T>| {
        grad[[bi, c, y, x]] += T::of(g / nf);
    };
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let cs = pseudo[[bi, y, x]];
                if cs == ignore || cs as usize >= k {
                    continue;
                }
                let cs = cs as usize;
                let q = p_tn[[bi, cs, y, x]].f64();
                // (probability inside the log, its class, modulating probability, its class)
                let (p, cp) = if windowed {
                    (prob[[bi, y, x]], arg[[bi, y, x]] as usize)
                } else {
                    (q, cs)
                };
                let (m, cm) = match kind {
                    StaticLossKind::Windowed | StaticLossKind::Focal => (q, cs),
                    StaticLossKind::Matched => (p, cp),
                    _ => (0.0, cs),
                };
                let use_focal = kind != StaticLossKind::CrossEntropy;
                let fac = if use_focal { focal_factor(m, gamma) } else { 1.0 };
                let logp = p.max(PROB_FLOOR).ln();
                value -= fac * logp;
                if use_focal {
                    add(bi, cm, y, x, -focal_factor_deriv(m, gamma) * logp, &mut grad);
                }
                if p > PROB_FLOOR {
                    add(bi, cp, y, x, -fac / p, &mut grad);
                }
            }
        }
    }
    Ok(LossGrad { value: value / nf, grad })
}
