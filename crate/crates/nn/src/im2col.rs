use crate::Float;

/// Sliding-window geometry of a 2-D convolution over one `C×H×W` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if height + 2 * pad < kernel || width + 2 * pad < kernel || stride == 0 {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output indices `o` along an axis of length `len` for which
    /// `o*stride + k - pad` lands inside `[0, len)`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len-1
        let top = len as isize - 1 - off;
        let hi = if top < 0 { -1 } else { (top / s).min(out as isize - 1) };
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize + 1)
        }
    }
}

/// Unfolds `src` (`C×H×W`) into `cols` (`C·k·k × out_h·out_w`, row-major).
pub(crate) fn im2col<T: Float>(src: &[T], g: &Geometry, cols: &mut [T]) {
    debug_assert_eq!(src.len(), g.channels * g.height * g.width);
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    let n_out = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            let (y_lo, y_hi) = g.valid_range(ki, g.height, g.out_h);
            for kj in 0..g.kernel {
                let (x_lo, x_hi) = g.valid_range(kj, g.width, g.out_w);
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                dst.fill(T::zero());
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &plane[iy * g.width..(iy + 1) * g.width];
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = x_lo + kj - g.pad;
                        drow[x_lo..x_hi].copy_from_slice(&src_row[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            drow[ox] = src_row[ox * g.stride + kj - g.pad];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds `cols` back onto `dst` (`C×H×W`), accumulating overlapping windows.
pub(crate) fn col2im<T: Float>(cols: &[T], g: &Geometry, dst: &mut [T]) {
    debug_assert_eq!(dst.len(), g.channels * g.height * g.width);
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    let n_out = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut dst[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            let (y_lo, y_hi) = g.valid_range(ki, g.height, g.out_h);
            for kj in 0..g.kernel {
                let (x_lo, x_hi) = g.valid_range(kj, g.width, g.out_w);
                let srow_all = &cols[row * n_out..(row + 1) * n_out];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let prow = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let srow = &srow_all[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in x_lo..x_hi {
                        prow[ox * g.stride + kj - g.pad] += srow[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_follows_conv_arithmetic() {
        let g = Geometry::new(1, 512, 512, 4, 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (256, 256));
        let g = Geometry::new(1, 128, 128, 4, 1, 1).unwrap();
        assert_eq!(g.out_h, 127);
        assert!(Geometry::new(1, 1, 1, 4, 1, 1).is_none());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (4, 2, 1), (4, 1, 1), (1, 1, 0)] {
            let g = Geometry::new(2, 7, 6, k, s, p).unwrap();
            let x: Vec<f64> = (0..g.channels * g.height * g.width)
                .map(|i| ((i * 37 % 11) as f64) - 5.0)
                .collect();
            let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
                .map(|i| ((i * 13 % 7) as f64) - 3.0)
                .collect();
            let mut cols = vec![0.0; y.len()];
            im2col(&x, &g, &mut cols);
            let mut back = vec![0.0; x.len()];
            col2im(&y, &g, &mut back);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert_eq!(lhs, rhs, "k={k} s={s} p={p}");
        }
    }
}
