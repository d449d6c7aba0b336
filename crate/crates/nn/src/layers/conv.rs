use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayD, ArrayView2, ArrayViewMut2, IxDyn};
use rand::Rng;

use super::{Cache, Layer, Mode};
use crate::im2col::{col2im, im2col, Geometry};
use crate::param::join;
use crate::{exec, init, Float, NnError, Param, Result, StateMut, StateRef};

/// 2-D convolution with square kernel, zero padding and optional bias.
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl<T: Float> Conv2d<T> {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = init::he_normal(&[out_ch, in_ch, kernel, kernel], fan_in, rng);
        Self::from_parts(w, bias.then(|| ArrayD::zeros(IxDyn(&[out_ch]))), stride, pad)
    }

    /// Builds a layer from explicit weights of shape `[out, in, k, k]`.
    pub fn from_parts(weight: ArrayD<T>, bias: Option<ArrayD<T>>, stride: usize, pad: usize) -> Self {
        let s = weight.shape().to_vec();
        assert_eq!(s.len(), 4, "conv weight must be 4-D");
        assert_eq!(s[2], s[3], "square kernels only");
        if let Some(b) = &bias {
            assert_eq!(b.shape(), &[s[0]]);
        }
        Self {
            weight: Param::new(weight, true),
            bias: bias.map(|b| Param::new(b, false)),
            in_ch: s[1],
            out_ch: s[0],
            kernel: s[2],
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn geometry(&self, x: &Array4<T>) -> Result<Geometry> {
        let (_, c, h, w) = x.dim();
        if c != self.in_ch {
            return Err(NnError::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_ch
            )));
        }
        Geometry::new(c, h, w, self.kernel, self.stride, self.pad).ok_or_else(|| {
            NnError::Shape(format!(
                "input {h}x{w} smaller than {k}x{k} kernel with padding {p}",
                k = self.kernel,
                p = self.pad
            ))
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn wmat(&self) -> ArrayView2<'_, T> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_ch, self.in_ch * self.kernel * self.kernel))
            .expect("contiguous conv weight")
    }

    fn run(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let g = self.geometry(x)?;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let b = x.dim().0;
        let img = g.channels * g.height * g.width;
        let n = g.col_cols();
        let rows = g.col_rows();
        let wmat = self.wmat();
        let bias = self.bias.as_ref().map(|p| p.value.as_slice().expect("contiguous"));
        let pointwise = self.is_pointwise();
        let mut out = Array4::<T>::zeros((b, self.out_ch, g.out_h, g.out_w));
        exec::for_each_chunk_mut(
            out.as_slice_mut().expect("fresh array"),
            self.out_ch * n,
            |i, o| {
                let src = &xs[i * img..(i + 1) * img];
                let owned;
                let cols = if pointwise {
                    src
                } else {
                    let mut v = vec![T::zero(); rows * n];
                    im2col(src, &g, &mut v);
                    owned = v;
                    &owned[..]
                };
                let colv = ArrayView2::from_shape((rows, n), cols).expect("cols shape");
                let mut ov = ArrayViewMut2::from_shape((self.out_ch, n), o).expect("out shape");
                general_mat_mul(T::one(), &wmat, &colv, T::zero(), &mut ov);
                if let Some(bias) = bias {
                    for (mut row, &bv) in ov.rows_mut().into_iter().zip(bias) {
                        row.mapv_inplace(|v| v + bv);
                    }
                }
            },
        );
        Ok(out)
    }
}

impl<T: Float> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: Array4<T>, _mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        let y = self.run(&x)?;
        Ok((y, Cache::Input(x)))
    }

    fn infer(&self, x: Array4<T>) -> Result<Array4<T>> {
        self.run(&x)
    }

    fn backward(&mut self, cache: Cache<T>, dy: Array4<T>) -> Array4<T> {
        let Cache::Input(x) = cache else {
            panic!("conv backward needs its input");
        };
        let g = self.geometry(&x).expect("shape checked in forward");
        let x = x.as_standard_layout();
        let dy = dy.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        let b = x.dim().0;
        let img = g.channels * g.height * g.width;
        let n = g.col_cols();
        let rows = g.col_rows();
        let out_ch = self.out_ch;
        let pointwise = self.is_pointwise();
        let wmat = self.wmat();

        let parts = exec::map_range(b, |i| {
            let src = &xs[i * img..(i + 1) * img];
            let mut cols = vec![T::zero(); if pointwise { 0 } else { rows * n }];
            let colv = if pointwise {
                ArrayView2::from_shape((rows, n), src)
            } else {
                im2col(src, &g, &mut cols);
                ArrayView2::from_shape((rows, n), &cols[..])
            }
            .expect("cols shape");
            let dyv = ArrayView2::from_shape((out_ch, n), &dys[i * out_ch * n..(i + 1) * out_ch * n])
                .expect("dy shape");
            let mut dw = Array2::<T>::zeros((out_ch, rows));
            general_mat_mul(T::one(), &dyv, &colv.t(), T::zero(), &mut dw);
            let db: Vec<T> = dyv.rows().into_iter().map(|r| r.sum()).collect();
            let mut dcols = Array2::<T>::zeros((rows, n));
            general_mat_mul(T::one(), &wmat.t(), &dyv, T::zero(), &mut dcols);
            let dx = if pointwise {
                dcols.into_raw_vec_and_offset().0
            } else {
                let mut dx = vec![T::zero(); img];
                col2im(dcols.as_slice().expect("fresh"), &g, &mut dx);
                dx
            };
            (dw, db, dx)
        });

        let mut dx = Vec::with_capacity(b * img);
        {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((out_ch, rows))
                .expect("contiguous grad");
            for (dw, _, _) in &parts {
                wgrad += dw;
            }
        }
        if let Some(bias) = &mut self.bias {
            let bg = bias.grad.as_slice_mut().expect("contiguous");
            for (_, db, _) in &parts {
                for (g, v) in bg.iter_mut().zip(db) {
                    *g += *v;
                }
            }
        }
        for (_, _, d) in parts {
            dx.extend_from_slice(&d);
        }
        Array4::from_shape_vec((b, g.channels, g.height, g.width), dx).expect("dx shape")
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_, T>)) {
        f(&join(prefix, "weight"), StateRef::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), StateRef::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_, T>)) {
        f(&join(prefix, "weight"), StateMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), StateMut::Param(b));
        }
    }
}

/// Transposed 2-D convolution (the adjoint of [`Conv2d`] with the same
/// kernel/stride/padding), weights laid out `[in, out, k, k]`.
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
}

impl<T: Float> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        // each output pixel receives in_ch * (k/stride)^2 contributions on average
        let fan_in = (in_ch * kernel * kernel / (stride * stride)).max(1);
        let w = init::he_normal(&[in_ch, out_ch, kernel, kernel], fan_in, rng);
        Self::from_parts(
            w,
            bias.then(|| ArrayD::zeros(IxDyn(&[out_ch]))),
            stride,
            pad,
            out_pad,
        )
    }

    pub fn from_parts(
        weight: ArrayD<T>,
        bias: Option<ArrayD<T>>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Self {
        let s = weight.shape().to_vec();
        assert_eq!(s.len(), 4, "transposed conv weight must be 4-D");
        assert!(out_pad < stride.max(1), "output padding must be below stride");
        Self {
            weight: Param::new(weight, true),
            bias: bias.map(|b| Param::new(b, false)),
            in_ch: s[0],
            out_ch: s[1],
            kernel: s[2],
            stride,
            pad,
            out_pad,
        }
    }

    /// Geometry of the equivalent forward convolution running from the
    /// output grid back to the input grid.
    fn geometry(&self, x: &Array4<T>) -> Result<Geometry> {
        let (_, c, h, w) = x.dim();
        if c != self.in_ch {
            return Err(NnError::Shape(format!(
                "transposed conv expects {} input channels, got {c}",
                self.in_ch
            )));
        }
        let size = |n: usize| -> Result<usize> {
            let full = (n.saturating_sub(1)) * self.stride + self.kernel + self.out_pad;
            if n == 0 || full <= 2 * self.pad {
                return Err(NnError::Shape(format!("transposed conv input {h}x{w} too small")));
            }
            Ok(full - 2 * self.pad)
        };
        let (oh, ow) = (size(h)?, size(w)?);
        let g = Geometry::new(self.out_ch, oh, ow, self.kernel, self.stride, self.pad)
            .ok_or_else(|| NnError::Shape("transposed conv geometry".into()))?;
        debug_assert_eq!((g.out_h, g.out_w), (h, w));
        Ok(g)
    }

    fn wmat(&self) -> ArrayView2<'_, T> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.in_ch, self.out_ch * self.kernel * self.kernel))
            .expect("contiguous weight")
    }

    fn run(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let g = self.geometry(x)?;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let b = x.dim().0;
        let n_in = g.col_cols();
        let rows = g.col_rows();
        let plane = g.channels * g.height * g.width;
        let in_ch = self.in_ch;
        let wmat = self.wmat();
        let bias = self.bias.as_ref().map(|p| p.value.as_slice().expect("contiguous"));
        let mut out = Array4::<T>::zeros((b, self.out_ch, g.height, g.width));
        exec::for_each_chunk_mut(out.as_slice_mut().expect("fresh"), plane, |i, o| {
            let xv = ArrayView2::from_shape((in_ch, n_in), &xs[i * in_ch * n_in..(i + 1) * in_ch * n_in])
                .expect("x shape");
            let mut cols = Array2::<T>::zeros((rows, n_in));
            general_mat_mul(T::one(), &wmat.t(), &xv, T::zero(), &mut cols);
            col2im(cols.as_slice().expect("fresh"), &g, o);
            if let Some(bias) = bias {
                let hw = g.height * g.width;
                for (c, &bv) in bias.iter().enumerate() {
                    for v in &mut o[c * hw..(c + 1) * hw] {
                        *v += bv;
                    }
                }
            }
        });
        Ok(out)
    }
}

impl<T: Float> Layer<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: Array4<T>, _mode: Mode) -> Result<(Array4<T>, Cache<T>)> {
        let y = self.run(&x)?;
        Ok((y, Cache::Input(x)))
    }

    fn infer(&self, x: Array4<T>) -> Result<Array4<T>> {
        self.run(&x)
    }

    fn backward(&mut self, cache: Cache<T>, dy: Array4<T>) -> Array4<T> {
        let Cache::Input(x) = cache else {
            panic!("transposed conv backward needs its input");
        };
        let g = self.geometry(&x).expect("shape checked in forward");
        let x = x.as_standard_layout();
        let dy = dy.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        let b = x.dim().0;
        let n_in = g.col_cols();
        let rows = g.col_rows();
        let plane = g.channels * g.height * g.width;
        let in_ch = self.in_ch;
        let wmat = self.wmat();

        let parts = exec::map_range(b, |i| {
            let mut dcols = vec![T::zero(); rows * n_in];
            im2col(&dys[i * plane..(i + 1) * plane], &g, &mut dcols);
            let dcv = ArrayView2::from_shape((rows, n_in), &dcols[..]).expect("cols shape");
            let xv = ArrayView2::from_shape((in_ch, n_in), &xs[i * in_ch * n_in..(i + 1) * in_ch * n_in])
                .expect("x shape");
            let mut dx = Array2::<T>::zeros((in_ch, n_in));
            general_mat_mul(T::one(), &wmat, &dcv, T::zero(), &mut dx);
            let mut dw = Array2::<T>::zeros((in_ch, rows));
            general_mat_mul(T::one(), &xv, &dcv.t(), T::zero(), &mut dw);
            let hw = g.height * g.width;
            let db: Vec<T> = (0..g.channels)
                .map(|c| {
                    dys[i * plane + c * hw..i * plane + (c + 1) * hw]
                        .iter()
                        .fold(T::zero(), |a, &v| a + v)
                })
                .collect();
            (dw, db, dx)
        });

        {
            let mut wgrad = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((in_ch, rows))
                .expect("contiguous grad");
            for (dw, _, _) in &parts {
                wgrad += dw;
            }
        }
        if let Some(bias) = &mut self.bias {
            let bg = bias.grad.as_slice_mut().expect("contiguous");
            for (_, db, _) in &parts {
                for (g, v) in bg.iter_mut().zip(db) {
                    *g += *v;
                }
            }
        }
        let mut dx = Vec::with_capacity(b * in_ch * n_in);
        for (_, _, d) in parts {
            dx.extend(d.into_raw_vec_and_offset().0);
        }
        Array4::from_shape_vec((b, in_ch, g.out_h, g.out_w), dx).expect("dx shape")
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_, T>)) {
        f(&join(prefix, "weight"), StateRef::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), StateRef::Param(b));
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_, T>)) {
        f(&join(prefix, "weight"), StateMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), StateMut::Param(b));
        }
    }
}
