//! Stateless tensor operations with their backward passes.

use ndarray::{Array4, ArrayView4};

use crate::{exec, Float};

/// Softmax over the channel axis of a `B×K×H×W` tensor (max-subtracted).
pub fn softmax_channels<T: Float>(logits: ArrayView4<'_, T>) -> Array4<T> {
    channel_map(logits, |col, out| {
        let m = col.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut z = T::zero();
        for (o, &v) in out.iter_mut().zip(col) {
            *o = (v - m).exp();
            z += *o;
        }
        for o in out.iter_mut() {
            *o /= z;
        }
    })
}

/// Log-softmax over the channel axis (max-subtracted).
pub fn log_softmax_channels<T: Float>(logits: ArrayView4<'_, T>) -> Array4<T> {
    channel_map(logits, |col, out| {
        let m = col.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let lse = col.iter().fold(T::zero(), |a, &v| a + (v - m).exp()).ln() + m;
        for (o, &v) in out.iter_mut().zip(col) {
            *o = v - lse;
        }
    })
}

/// Given `p = softmax(z)` and `dL/dp`, returns `dL/dz = p ⊙ (g − ⟨p, g⟩)`.
pub fn softmax_backward<T: Float>(probs: ArrayView4<'_, T>, dprobs: ArrayView4<'_, T>) -> Array4<T> {
    assert_eq!(probs.dim(), dprobs.dim(), "softmax backward shape mismatch");
    let (b, k, h, w) = probs.dim();
    let mut out = Array4::<T>::zeros((b, k, h, w));
    let hw = h * w;
    let p = probs.as_standard_layout();
    let g = dprobs.as_standard_layout();
    let ps = p.as_slice().expect("standard layout");
    let gs = g.as_slice().expect("standard layout");
    exec::for_each_chunk_mut(out.as_slice_mut().expect("fresh"), k * hw, |bi, o| {
        let base = bi * k * hw;
        for i in 0..hw {
            let mut dot = T::zero();
            for c in 0..k {
                dot += ps[base + c * hw + i] * gs[base + c * hw + i];
            }
            for c in 0..k {
                let idx = c * hw + i;
                o[idx] = ps[base + idx] * (gs[base + idx] - dot);
            }
        }
    });
    out
}

/// Applies `f(column_in, column_out)` to every pixel's channel vector.
fn channel_map<T: Float, F>(x: ArrayView4<'_, T>, f: F) -> Array4<T>
where
    F: Fn(&[T], &mut [T]) + Sync + Send,
{
    let (b, k, h, w) = x.dim();
    let hw = h * w;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::<T>::zeros((b, k, h, w));
    exec::for_each_chunk_mut(out.as_slice_mut().expect("fresh"), k * hw, |bi, o| {
        let base = bi * k * hw;
        let mut col = vec![T::zero(); k];
        let mut res = vec![T::zero(); k];
        for i in 0..hw {
            for c in 0..k {
                col[c] = xs[base + c * hw + i];
            }
            f(&col, &mut res);
            for c in 0..k {
                o[c * hw + i] = res[c];
            }
        }
    });
    out
}

/// Source taps and weights for one output coordinate of a bilinear resize.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - w1,
                w1,
            }
        })
        .collect()
}

/// Bilinear resize of each plane to `out_h × out_w` (half-pixel centers,
/// edge-clamped), matching the common `align_corners = false` convention.
pub fn resize_bilinear<T: Float>(x: &Array4<T>, out_h: usize, out_w: usize) -> Array4<T> {
    let (b, c, h, w) = x.dim();
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::<T>::zeros((b, c, out_h, out_w));
    exec::for_each_chunk_mut(out.as_slice_mut().expect("fresh"), out_h * out_w, |pi, o| {
        let plane = &xs[pi * h * w..(pi + 1) * h * w];
        for (oy, ty) in ty.iter().enumerate() {
            let r0 = &plane[ty.i0 * w..(ty.i0 + 1) * w];
            let r1 = &plane[ty.i1 * w..(ty.i1 + 1) * w];
            let (a0, a1) = (T::of(ty.w0), T::of(ty.w1));
            for (ox, tx) in tx.iter().enumerate() {
                let (b0, b1) = (T::of(tx.w0), T::of(tx.w1));
                o[oy * out_w + ox] =
                    a0 * (b0 * r0[tx.i0] + b1 * r0[tx.i1]) + a1 * (b0 * r1[tx.i0] + b1 * r1[tx.i1]);
            }
        }
    });
    out
}

/// Adjoint of [`resize_bilinear`]: scatters `dy` back onto an `in_h × in_w` grid.
pub fn resize_bilinear_backward<T: Float>(dy: &Array4<T>, in_h: usize, in_w: usize) -> Array4<T> {
    let (b, c, out_h, out_w) = dy.dim();
    let ty = taps(in_h, out_h);
    let tx = taps(in_w, out_w);
    let dy = dy.as_standard_layout();
    let ds = dy.as_slice().expect("standard layout");
    let mut out = Array4::<T>::zeros((b, c, in_h, in_w));
    exec::for_each_chunk_mut(out.as_slice_mut().expect("fresh"), in_h * in_w, |pi, o| {
        let plane = &ds[pi * out_h * out_w..(pi + 1) * out_h * out_w];
        for (oy, ty) in ty.iter().enumerate() {
            let (a0, a1) = (T::of(ty.w0), T::of(ty.w1));
            for (ox, tx) in tx.iter().enumerate() {
                let g = plane[oy * out_w + ox];
                let (b0, b1) = (T::of(tx.w0), T::of(tx.w1));
                o[ty.i0 * in_w + tx.i0] += a0 * b0 * g;
                o[ty.i0 * in_w + tx.i1] += a0 * b1 * g;
                o[ty.i1 * in_w + tx.i0] += a1 * b0 * g;
                o[ty.i1 * in_w + tx.i1] += a1 * b1 * g;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn sample(shape: (usize, usize, usize, usize)) -> Array4<f64> {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        Array::from_shape_vec(shape, (0..n).map(|i| ((i * 31 % 17) as f64) / 4.0 - 2.0).collect()).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_channels(sample((2, 5, 3, 4)).view());
        for b in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let s: f64 = (0..5).map(|c| p[[b, c, y, x]]).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn log_softmax_survives_huge_logits() {
        let mut z = Array4::<f64>::zeros((1, 3, 1, 1));
        z[[0, 0, 0, 0]] = 1000.0;
        let l = log_softmax_channels(z.view());
        assert!(l.iter().all(|v| v.is_finite()));
        assert!(l[[0, 0, 0, 0]].abs() < 1e-12);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let x = sample((1, 2, 4, 5));
        let y = sample((1, 2, 16, 20)).mapv(|v| v * 0.3 + 0.1);
        let rx = resize_bilinear(&x, 16, 20);
        let by = resize_bilinear_backward(&y, 4, 5);
        let lhs: f64 = rx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(by.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let x = Array4::from_elem((1, 1, 3, 3), 0.7f64);
        let r = resize_bilinear(&x, 12, 12);
        assert!(r.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }
}
