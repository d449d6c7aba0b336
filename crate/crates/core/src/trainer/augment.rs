//! Random scale, crop and horizontal flip.

use ndarray::{s, Array2, Array3, Axis};
use nightadapt_nn::ops::resize_bilinear;
use rand::Rng;

use crate::labels::IGNORE_INDEX;

/// One random geometry, applied identically to every image of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub scaled_h: usize,
    pub scaled_w: usize,
    /// Offset of the crop window in the scaled image; negative means padding.
    pub top: isize,
    pub left: isize,
    pub crop: usize,
    pub flip: bool,
}

impl Geometry {
    pub fn sample<R: Rng>(h: usize, w: usize, crop: usize, scale: (f64, f64), flip: bool, rng: &mut R) -> Self {
        let s = if scale.0 < scale.1 { rng.random_range(scale.0..=scale.1) } else { scale.0 };
        let scaled_h = ((h as f64 * s).round() as usize).max(1);
        let scaled_w = ((w as f64 * s).round() as usize).max(1);
        let offset = |len: usize, rng: &mut R| -> isize {
            if len >= crop {
                rng.random_range(0..=len - crop) as isize
            } else {
                -(rng.random_range(0..=crop - len) as isize)
            }
        };
        let top = offset(scaled_h, rng);
        let left = offset(scaled_w, rng);
        let flip = flip && rng.random_bool(0.5);
        Self {
            scaled_h,
            scaled_w,
            top,
            left,
            crop,
            flip,
        }
    }

    /// Source coordinate in the scaled image for crop coordinate `(y, x)`.
    fn source(&self, y: usize, x: usize) -> Option<(usize, usize)> {
        let x = if self.flip { self.crop - 1 - x } else { x };
        let sy = self.top + y as isize;
        let sx = self.left + x as isize;
        if sy < 0 || sx < 0 || sy as usize >= self.scaled_h || sx as usize >= self.scaled_w {
            None
        } else {
            Some((sy as usize, sx as usize))
        }
    }

    /// Bilinear rescale then crop; padding is zero.
    pub fn apply_image(&self, img: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = img.dim();
        let scaled = if (h, w) == (self.scaled_h, self.scaled_w) {
            img.clone()
        } else {
            resize_bilinear(&img.clone().insert_axis(Axis(0)), self.scaled_h, self.scaled_w).index_axis_move(Axis(0), 0)
        };
        let mut out = Array3::zeros((c, self.crop, self.crop));
        for y in 0..self.crop {
            for x in 0..self.crop {
                if let Some((sy, sx)) = self.source(y, x) {
                    out.slice_mut(s![.., y, x]).assign(&scaled.slice(s![.., sy, sx]));
                }
            }
        }
        out
    }

    /// Nearest-neighbour rescale then crop; padding is the ignore index.
    pub fn apply_label(&self, lbl: &Array2<u8>) -> Array2<u8> {
        let (h, w) = lbl.dim();
        Array2::from_shape_fn((self.crop, self.crop), |(y, x)| match self.source(y, x) {
            Some((sy, sx)) => {
                let oy = ((sy as f64 + 0.5) * h as f64 / self.scaled_h as f64).floor() as usize;
                let ox = ((sx as f64 + 0.5) * w as f64 / self.scaled_w as f64).floor() as usize;
                lbl[[oy.min(h - 1), ox.min(w - 1)]]
            }
            None => IGNORE_INDEX,
        })
    }

    /// True where the crop covers real image content.
    pub fn valid_mask(&self) -> Array2<bool> {
        Array2::from_shape_fn((self.crop, self.crop), |(y, x)| self.source(y, x).is_some())
    }
}

/// Augments one image and optional label with a freshly drawn geometry.
pub fn augment_sample<R: Rng>(
    img: &Array3<f32>,
    lbl: Option<&Array2<u8>>,
    crop: usize,
    scale: (f64, f64),
    flip: bool,
    rng: &mut R,
) -> (Array3<f32>, Option<Array2<u8>>) {
    let (_, h, w) = img.dim();
    let g = Geometry::sample(h, w, crop, scale, flip, rng);
    (g.apply_image(img), lbl.map(|l| g.apply_label(l)))
}

/// Horizontal flip of a `C×H×W` image.
pub fn hflip(img: &Array3<f32>) -> Array3<f32> {
    img.slice(s![.., .., ..;-1]).to_owned()
}
