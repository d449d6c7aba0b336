//! PNG reading and writing for images (`3×H×W` in `[0, 1]`) and label maps.

use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::Result;

pub fn load_rgb(path: impl AsRef<Path>) -> Result<Array3<f32>> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

/// Clamps to `[0, 1]` and writes an 8-bit RGB PNG.
pub fn save_rgb(path: impl AsRef<Path>, img: ArrayView3<'_, f32>) -> Result<()> {
    let (_, h, w) = img.dim();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (img[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    out.save(path.as_ref())?;
    Ok(())
}

pub fn load_label(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let img = image::open(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| img.get_pixel(x as u32, y as u32)[0]))
}

pub fn save_label(path: impl AsRef<Path>, label: ArrayView2<'_, u8>) -> Result<()> {
    let (h, w) = label.dim();
    let out = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([label[[y as usize, x as usize]]]));
    out.save(path.as_ref())?;
    Ok(())
}

/// Writes a colour-coded label map using `palette[class]`; ignored pixels are black.
pub fn save_color_label(path: impl AsRef<Path>, label: ArrayView2<'_, u8>, palette: &[[u8; 3]]) -> Result<()> {
    let (h, w) = label.dim();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let c = label[[y as usize, x as usize]] as usize;
        image::Rgb(palette.get(c).copied().unwrap_or([0, 0, 0]))
    });
    out.save(path.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array3::from_shape_fn((3, 4, 5), |(c, y, x)| ((c * 20 + y * 5 + x) as f32) / 255.0);
        save_rgb(dir.path().join("a.png"), img.view()).unwrap();
        let back = load_rgb(dir.path().join("a.png")).unwrap();
        assert!(back.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
        let lbl = Array2::from_shape_fn((4, 5), |(y, x)| if x == 0 { 255 } else { (y + x) as u8 });
        save_label(dir.path().join("l.png"), lbl.view()).unwrap();
        assert_eq!(load_label(dir.path().join("l.png")).unwrap(), lbl);
    }
}
