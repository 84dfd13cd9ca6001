//! 8-bit PNG previews. Export only; PNGs are never read back.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array2;

use super::{BandName, MultispectralImage};
use crate::Result;

fn stretch(values: &Array2<f64>) -> impl Fn(f64) -> u8 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    move |v| {
        if span > 0.0 {
            (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }
}

/// Min-max stretched grayscale rendering of one plane.
pub fn gray_png(values: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let to_u8 = stretch(values);
    let (h, w) = values.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(values[[y as usize, x as usize]])]));
    img.save(path)?;
    Ok(())
}

/// Natural-colour composite from the red, green and blue bands, each
/// stretched independently.
pub fn rgb_png(img: &MultispectralImage, path: impl AsRef<Path>) -> Result<()> {
    let r = img.band(BandName::Red)?.values();
    let g = img.band(BandName::Green)?.values();
    let b = img.band(BandName::Blue)?.values();
    let (sr, sg, sb) = (stretch(r), stretch(g), stretch(b));
    let (h, w) = img.dims();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (i, j) = (y as usize, x as usize);
        Rgb([sr(r[[i, j]]), sg(g[[i, j]]), sb(b[[i, j]])])
    });
    out.save(path)?;
    Ok(())
}

/// Boolean mask as 0/255 grayscale.
pub fn mask_png(mask: &Array2<bool>, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}
