//! Four-band reflectance rasters.
//!
//! Layout is band-major and row-major within each band, which is also the
//! payload order of the MSR file format (see [`io`]).

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Zip};

use crate::{Error, Result};

pub mod io;
pub mod preview;

pub use io::{load_image, save_image};

/// Ground sampling distance of the high-resolution (Sentinel-2) grid.
pub const HR_PIXEL_SIZE_M: f64 = 10.0;
/// Ground sampling distance of the low-resolution (Landsat) grid.
pub const LR_PIXEL_SIZE_M: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BandName {
    Blue,
    Green,
    Red,
    Nir,
}

impl BandName {
    pub const ALL: [BandName; 4] = [BandName::Blue, BandName::Green, BandName::Red, BandName::Nir];

    pub fn label(self) -> &'static str {
        match self {
            BandName::Blue => "blue",
            BandName::Green => "green",
            BandName::Red => "red",
            BandName::Nir => "nir",
        }
    }
}

impl fmt::Display for BandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BandName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blue" => Ok(BandName::Blue),
            "green" => Ok(BandName::Green),
            "red" => Ok(BandName::Red),
            "nir" => Ok(BandName::Nir),
            other => Err(Error::UnknownBand(other.to_string())),
        }
    }
}

/// A single band: a rectangular grid of reflectances.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPlane(Array2<f64>);

impl BandPlane {
    /// Wraps `values`, rejecting empty grids and non-finite entries.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("band plane must be non-empty"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(BandPlane(values))
    }

    /// Wraps `values` without the finiteness scan. Solver iterates use this;
    /// anything persisted goes through [`save_image`], which re-validates.
    pub fn new_unchecked(values: Array2<f64>) -> Self {
        BandPlane(values)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BandPlane(Array2::zeros((height, width)))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        BandPlane(Array2::from_elem((height, width), value))
    }

    pub fn height(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[[row, col]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        crate::sum::compensated(self.0.iter().copied()) / self.0.len() as f64
    }
}

/// Rectangular crop in pixel coordinates of the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub origin_row: usize,
    pub origin_col: usize,
    pub height: usize,
    pub width: usize,
}

impl CropWindow {
    pub fn new(origin_row: usize, origin_col: usize, height: usize, width: usize) -> Self {
        CropWindow { origin_row, origin_col, height, width }
    }

    pub fn full(height: usize, width: usize) -> Self {
        CropWindow::new(0, 0, height, width)
    }

    pub fn fits_within(&self, height: usize, width: usize) -> bool {
        self.height > 0
            && self.width > 0
            && self.origin_row.checked_add(self.height).is_some_and(|r| r <= height)
            && self.origin_col.checked_add(self.width).is_some_and(|c| c <= width)
    }

    /// Window `inner`, expressed relative to `self`, mapped back to the
    /// coordinates of the image `self` was cut from.
    pub fn compose(&self, inner: &CropWindow) -> CropWindow {
        CropWindow::new(
            self.origin_row + inner.origin_row,
            self.origin_col + inner.origin_col,
            inner.height,
            inner.width,
        )
    }
}

/// Co-registered multispectral image. Bands share one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralImage {
    bands: Vec<BandPlane>,
    band_names: Vec<BandName>,
    pixel_size: f64,
    scale_applied: f64,
}

impl MultispectralImage {
    pub fn new(bands: Vec<BandPlane>, band_names: Vec<BandName>, pixel_size: f64) -> Result<Self> {
        for (i, b) in bands.iter().enumerate() {
            if !b.is_finite() {
                return Err(Error::validation(format!("band {i} holds non-finite values")));
            }
        }
        Self::new_unchecked(bands, band_names, pixel_size)
    }

    /// Like [`MultispectralImage::new`] but skips the per-pixel finiteness
    /// scan. Shape, label and pixel-size checks still apply.
    pub fn new_unchecked(
        bands: Vec<BandPlane>,
        band_names: Vec<BandName>,
        pixel_size: f64,
    ) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::validation("image needs at least one band"));
        }
        if bands.len() != band_names.len() {
            return Err(Error::validation(format!(
                "{} bands but {} band labels",
                bands.len(),
                band_names.len()
            )));
        }
        let dims = bands[0].dims();
        if let Some(b) = bands.iter().find(|b| b.dims() != dims) {
            return Err(Error::dims(format!(
                "band of {:?} does not match first band {:?}",
                b.dims(),
                dims
            )));
        }
        for (i, name) in band_names.iter().enumerate() {
            if band_names[..i].contains(name) {
                return Err(Error::validation(format!("duplicate band label `{name}`")));
            }
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(Error::validation(format!("pixel size must be > 0, got {pixel_size}")));
        }
        Ok(MultispectralImage { bands, band_names, pixel_size, scale_applied: 1.0 })
    }

    pub fn zeros(height: usize, width: usize, band_names: &[BandName], pixel_size: f64) -> Result<Self> {
        let bands = band_names.iter().map(|_| BandPlane::zeros(height, width)).collect();
        Self::new_unchecked(bands, band_names.to_vec(), pixel_size)
    }

    /// Same grid and labels, new band contents. `planes` must match in count
    /// and shape.
    pub fn with_bands(&self, planes: Vec<BandPlane>) -> Result<Self> {
        let mut out = Self::new_unchecked(planes, self.band_names.clone(), self.pixel_size)?;
        out.scale_applied = self.scale_applied;
        Ok(out)
    }

    pub(crate) fn with_bands_resampled(&self, planes: Vec<BandPlane>, pixel_size: f64) -> Result<Self> {
        let mut out = Self::new_unchecked(planes, self.band_names.clone(), pixel_size)?;
        out.scale_applied = self.scale_applied;
        Ok(out)
    }

    pub fn with_scale_applied(mut self, scale: f64) -> Self {
        self.scale_applied = scale;
        self
    }

    pub fn bands(&self) -> &[BandPlane] {
        &self.bands
    }

    pub fn into_bands(self) -> Vec<BandPlane> {
        self.bands
    }

    pub fn band_names(&self) -> &[BandName] {
        &self.band_names
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn height(&self) -> usize {
        self.bands[0].height()
    }

    pub fn width(&self) -> usize {
        self.bands[0].width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.bands[0].dims()
    }

    /// Meters per pixel.
    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    /// Factor that mapped source digital numbers to reflectance at ingestion.
    pub fn scale_applied(&self) -> f64 {
        self.scale_applied
    }

    pub fn band(&self, name: BandName) -> Result<&BandPlane> {
        self.band_names
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.bands[i])
            .ok_or_else(|| Error::UnknownBand(name.to_string()))
    }

    /// Looks a band up by its textual label.
    pub fn band_by_label(&self, label: &str) -> Result<&BandPlane> {
        self.band(label.parse()?)
    }

    pub fn is_finite(&self) -> bool {
        self.bands.iter().all(BandPlane::is_finite)
    }

    pub fn crop(&self, window: &CropWindow) -> Result<Self> {
        let (h, w) = self.dims();
        if !window.fits_within(h, w) {
            return Err(Error::dims(format!(
                "crop window {window:?} exceeds {h}x{w} image"
            )));
        }
        let (r0, c0) = (window.origin_row, window.origin_col);
        let planes = self
            .bands
            .iter()
            .map(|b| {
                BandPlane::new_unchecked(
                    b.values().slice(s![r0..r0 + window.height, c0..c0 + window.width]).to_owned(),
                )
            })
            .collect();
        self.with_bands(planes)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.band_names == other.band_names
    }

    pub(crate) fn check_layout(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "{what}: {:?} {:?} vs {:?} {:?}",
                self.dims(),
                self.band_names,
                other.dims(),
                other.band_names
            )))
        }
    }

    /// Applies `f` to every band plane, keeping labels and grid.
    pub fn map_bands<F>(&self, f: F) -> Self
    where
        F: Fn(&Array2<f64>) -> Array2<f64>,
    {
        let planes = self.bands.iter().map(|b| BandPlane::new_unchecked(f(b.values()))).collect();
        self.with_bands(planes).expect("map preserves layout")
    }

    /// Elementwise `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Result<Self> {
        self.check_layout(other, "add_scaled")?;
        let planes = self
            .bands
            .iter()
            .zip(&other.bands)
            .map(|(a, b)| {
                let mut out = a.values().clone();
                out.scaled_add(alpha, b.values());
                BandPlane::new_unchecked(out)
            })
            .collect();
        self.with_bands(planes)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map_bands(|v| v * alpha)
    }

    /// Euclidean inner product over all bands and pixels.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other, "dot")?;
        let mut acc = crate::sum::KahanSum::default();
        for (a, b) in self.bands.iter().zip(&other.bands) {
            Zip::from(a.values()).and(b.values()).for_each(|x, y| acc.add(x * y));
        }
        Ok(acc.value())
    }

    pub fn norm_sq(&self) -> f64 {
        let mut acc = crate::sum::KahanSum::default();
        for b in &self.bands {
            b.values().iter().for_each(|v| acc.add(v * v));
        }
        acc.value()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Squared distance `|self - other|^2`.
    pub fn distance_sq(&self, other: &Self) -> Result<f64> {
        self.check_layout(other, "distance")?;
        let mut acc = crate::sum::KahanSum::default();
        for (a, b) in self.bands.iter().zip(&other.bands) {
            Zip::from(a.values()).and(b.values()).for_each(|x, y| {
                let d = x - y;
                acc.add(d * d)
            });
        }
        Ok(acc.value())
    }

    /// Copy with every value clamped to `[lo, hi]`.
    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        self.map_bands(|v| v.mapv(|x| x.clamp(lo, hi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ramp_image(h: usize, w: usize) -> MultispectralImage {
        let bands = (0..4)
            .map(|b| {
                BandPlane::new(Array2::from_shape_fn((h, w), |(i, j)| (b * 1000 + i * w + j) as f64))
                    .unwrap()
            })
            .collect();
        MultispectralImage::new(bands, BandName::ALL.to_vec(), HR_PIXEL_SIZE_M).unwrap()
    }

    #[test]
    fn band_lookup_by_name() {
        let img = ramp_image(3, 3);
        assert_eq!(img.band(BandName::Green).unwrap().get(0, 0), 1000.0);
        assert_eq!(img.band(BandName::Nir).unwrap().get(0, 1), 3001.0);
        assert!(matches!(img.band_by_label("swir"), Err(Error::UnknownBand(_))));
    }

    #[test]
    fn missing_band_is_unknown() {
        let img = MultispectralImage::new(
            vec![BandPlane::zeros(2, 2)],
            vec![BandName::Red],
            10.0,
        )
        .unwrap();
        assert!(matches!(img.band(BandName::Nir), Err(Error::UnknownBand(_))));
    }

    #[test]
    fn rejects_inconsistent_construction() {
        let a = BandPlane::zeros(2, 2);
        let b = BandPlane::zeros(2, 3);
        assert!(MultispectralImage::new(vec![a.clone(), b], vec![BandName::Red, BandName::Nir], 10.0).is_err());
        assert!(MultispectralImage::new(vec![a.clone(), a.clone()], vec![BandName::Red, BandName::Red], 10.0).is_err());
        assert!(MultispectralImage::new(vec![a.clone()], vec![BandName::Red], 0.0).is_err());
        assert!(BandPlane::new(Array2::from_elem((1, 1), f64::NAN)).is_err());
    }

    #[test]
    fn crop_large_scene() {
        let img = MultispectralImage::zeros(11000, 11000, &[BandName::Green], 10.0).unwrap();
        let out = img.crop(&CropWindow::new(5000, 7000, 300, 300)).unwrap();
        assert_eq!(out.dims(), (300, 300));
        assert_eq!(out.pixel_size(), 10.0);
    }

    #[test]
    fn crop_edges() {
        let img = ramp_image(6, 8);
        assert_eq!(img.crop(&CropWindow::full(6, 8)).unwrap(), img);
        assert!(img.crop(&CropWindow::new(0, 5, 2, 4)).is_err());
        assert!(img.crop(&CropWindow::new(0, 0, 0, 4)).is_err());
        let c = img.crop(&CropWindow::new(1, 2, 2, 3)).unwrap();
        assert_eq!(c.band(BandName::Blue).unwrap().get(0, 0), 10.0);
    }

    #[test]
    fn nested_crops_compose() {
        let img = ramp_image(10, 12);
        let outer = CropWindow::new(2, 3, 6, 7);
        let inner = CropWindow::new(1, 2, 3, 4);
        let a = img.crop(&outer).unwrap().crop(&inner).unwrap();
        let b = img.crop(&outer.compose(&inner)).unwrap();
        assert_eq!(a, b);
    }
}
