//! Raster input and output.

use std::path::Path;

use cmif::{GridShape, IntensityImage, Mask, RigidTransform};
use image::{DynamicImage, GrayImage, Rgb, RgbImage};

use crate::Failure;

/// Loads a PNG or TIFF. Colour images keep three channels; 8- and 16-bit
/// samples are scaled to `[0, 1]`. Alpha is dropped.
pub fn load_image(path: &Path) -> Result<IntensityImage, Failure> {
    let img = image::open(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let shape =
        GridShape::new(img.height() as usize, img.width() as usize).map_err(Failure::from)?;
    let (channels, data): (usize, Vec<f64>) = if img.color().has_color() {
        (
            3,
            img.to_rgb32f()
                .into_raw()
                .into_iter()
                .map(f64::from)
                .collect(),
        )
    } else {
        (
            1,
            img.to_luma32f()
                .into_raw()
                .into_iter()
                .map(f64::from)
                .collect(),
        )
    };
    IntensityImage::new(shape, channels, data).map_err(Failure::from)
}

/// Nonzero pixels are inside the mask.
pub fn load_mask(path: &Path, shape: GridShape) -> Result<Mask, Failure> {
    let img = image::open(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let luma = img.to_luma16();
    let got =
        GridShape::new(luma.height() as usize, luma.width() as usize).map_err(Failure::from)?;
    if got != shape {
        return Err(Failure::usage(format!(
            "mask {} is {got}, image is {shape}",
            path.display()
        )));
    }
    Mask::new(shape, luma.pixels().map(|p| p.0[0] > 0).collect()).map_err(Failure::from)
}

fn first_channel(img: &IntensityImage) -> Vec<f64> {
    img.data().iter().step_by(img.channels()).copied().collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reference in red, floating image mapped through `t` in green.
pub fn write_overlay(
    path: &Path,
    reference: &IntensityImage,
    floating: &IntensityImage,
    t: &RigidTransform,
) -> Result<(), Failure> {
    let (rs, fs) = (reference.shape(), floating.shape());
    let (ra, fa) = (first_channel(reference), first_channel(floating));
    let inv = t.inverse();
    let mut out = RgbImage::new(rs.width() as u32, rs.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let [fx, fy] = inv.apply([x as f64, y as f64]);
        let (r, c) = (fy.round() as isize, fx.round() as isize);
        let g = if fs.contains(r, c) {
            fa[fs.index(r as usize, c as usize)]
        } else {
            0.0
        };
        let red = ra[rs.index(y as usize, x as usize)];
        *px = Rgb([to_u8(red), to_u8(g), 0]);
    }
    out.save(path)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// Writes an 8-bit PNG, grayscale or RGB by channel count.
pub fn save_image(path: &Path, img: &IntensityImage) -> Result<(), Failure> {
    let s = img.shape();
    let (w, h) = (s.width() as u32, s.height() as u32);
    let img = if img.channels() == 3 {
        let buf = img.data().iter().map(|&v| to_u8(v)).collect();
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, buf).expect("buffer matches shape"))
    } else {
        let buf = first_channel(img).into_iter().map(to_u8).collect();
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, buf).expect("buffer matches shape"))
    };
    img.save(path)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}
