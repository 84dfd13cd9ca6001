use ndarray::{s, Array2};

use crate::raster::{BandPlane, MultispectralImage};
use crate::wavelet::{decompose, reconstruct, transformable_dims};

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn threshold_plane(values: &Array2<f64>, t: f64, levels: usize) -> Array2<f64> {
    let (bh, bw) = transformable_dims(values.dim(), levels);
    let mut out = values.clone();
    if bh == 0 || bw == 0 {
        return out;
    }
    let (approx, mut details) = decompose(values.slice(s![..bh, ..bw]), levels);
    for lvl in &mut details {
        for band in [&mut lvl.lh, &mut lvl.hl, &mut lvl.hh] {
            band.mapv_inplace(|v| soft_threshold(v, t));
        }
    }
    out.slice_mut(s![..bh, ..bw]).assign(&reconstruct(approx, &details));
    out
}

/// `prox_{t |W_d x|_1}`: soft-thresholds the detail coefficients of a
/// `levels`-deep orthonormal Haar transform, per band. The transform covers
/// the leading block whose sides divide by `2^levels`; remaining rows and
/// columns pass through.
pub fn wavelet_soft_threshold_levels(x: &MultispectralImage, t: f64, levels: usize) -> MultispectralImage {
    if t == 0.0 {
        return x.clone();
    }
    let planes = x
        .bands()
        .iter()
        .map(|b| BandPlane::new_unchecked(threshold_plane(b.values(), t, levels)))
        .collect();
    x.with_bands(planes).expect("layout preserved")
}

pub fn wavelet_soft_threshold(x: &MultispectralImage, t: f64) -> MultispectralImage {
    wavelet_soft_threshold_levels(x, t, super::WAVELET_LEVELS)
}

/// `sum |detail coefficients|` over bands: the penalty whose prox is
/// [`wavelet_soft_threshold_levels`].
pub fn wavelet_l1(x: &MultispectralImage, levels: usize) -> f64 {
    let mut acc = crate::sum::KahanSum::default();
    for b in x.bands() {
        let (bh, bw) = transformable_dims(b.dims(), levels);
        if bh == 0 || bw == 0 {
            continue;
        }
        let (_, details) = decompose(b.values().slice(s![..bh, ..bw]), levels);
        for lvl in &details {
            for band in [&lvl.lh, &lvl.hl, &lvl.hh] {
                band.iter().for_each(|v| acc.add(v.abs()));
            }
        }
    }
    acc.value()
}
