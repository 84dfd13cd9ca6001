//! Evaluation: NDWI water masks and areas, PSNR, SSIM, and the bicubic and
//! nearest-neighbour upsampling baselines.

use std::io;

use ndarray::{Array1, Array2, Zip};
use rayon::prelude::*;

use crate::forward::Boundary;
use crate::raster::{BandName, BandPlane, MultispectralImage};
use crate::sum::KahanSum;
use crate::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const DEFAULT_WATER_THRESHOLD: f64 = 0.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Keys cubic convolution parameter.
pub const BICUBIC_A: f64 = -0.75;

/// `(green - nir) / (green + nir)` per pixel.
///
/// Reflectances are clamped at zero first so the index stays in `[-1, 1]` on
/// noisy inputs. A zero denominator yields 0.
pub fn ndwi(x: &MultispectralImage) -> Result<BandPlane> {
    let green = x.band(BandName::Green)?.values();
    let nir = x.band(BandName::Nir)?.values();
    let out = Zip::from(green).and(nir).map_collect(|&g, &n| {
        let (g, n) = (g.max(0.0), n.max(0.0));
        let den = g + n;
        if den > 0.0 {
            ((g - n) / den).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    });
    Ok(BandPlane::new_unchecked(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterMask {
    pub mask: Array2<bool>,
    pub threshold_used: f64,
    /// Ground sampling distance in metres.
    pub pixel_size: f64,
}

impl WaterMask {
    pub fn water_pixels(&self) -> usize {
        self.mask.iter().filter(|w| **w).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dim()
    }
}

/// `mask = ndwi > thr` (strict).
pub fn threshold_water(ndwi: &BandPlane, thr: f64, pixel_size: f64) -> Result<WaterMask> {
    if !thr.is_finite() {
        return Err(Error::param(format!("water threshold must be finite, got {thr}")));
    }
    if !(pixel_size.is_finite() && pixel_size > 0.0) {
        return Err(Error::param(format!("pixel size must be > 0, got {pixel_size}")));
    }
    Ok(WaterMask { mask: ndwi.values().mapv(|v| v > thr), threshold_used: thr, pixel_size })
}

/// NDWI followed by thresholding on the image's own grid.
pub fn water_mask(x: &MultispectralImage, thr: f64) -> Result<WaterMask> {
    threshold_water(&ndwi(x)?, thr, x.pixel_size())
}

/// Water pixel count times pixel area, in square metres.
pub fn water_area(mask: &WaterMask) -> f64 {
    mask.water_pixels() as f64 * mask.pixel_size * mask.pixel_size
}

/// Mean squared error over all bands and pixels jointly.
pub fn mse(x: &MultispectralImage, reference: &MultispectralImage) -> Result<f64> {
    let n = reference.band_count() * reference.height() * reference.width();
    Ok(x.distance_sq(reference)? / n as f64)
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &MultispectralImage, reference: &MultispectralImage, peak: f64) -> Result<f64> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::param(format!("PSNR peak must be > 0, got {peak}")));
    }
    let err = mse(x, reference)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / err).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window(size: usize, sigma: f64) -> Array1<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w = Array1::from_shape_fn(size, |i| {
        let d = i as f64 - c;
        (-d * d / (2.0 * sigma * sigma)).exp()
    });
    let s = w.sum();
    w / s
}

/// Separable weighted sum over every fully contained window.
fn filter_valid(x: &Array2<f64>, w: &Array1<f64>) -> Array2<f64> {
    let k = w.len();
    let (h, wd) = x.dim();
    let rows = Array2::from_shape_fn((h - k + 1, wd), |(i, j)| (0..k).map(|a| w[a] * x[[i + a, j]]).sum::<f64>());
    Array2::from_shape_fn((h - k + 1, wd - k + 1), |(i, j)| (0..k).map(|b| w[b] * rows[[i, j + b]]).sum())
}

fn ssim_plane(x: &Array2<f64>, y: &Array2<f64>, w: &Array1<f64>, peak: f64) -> f64 {
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mx = filter_valid(x, w);
    let my = filter_valid(y, w);
    let xx = filter_valid(&(x * x), w);
    let yy = filter_valid(&(y * y), w);
    let xy = filter_valid(&(x * y), w);
    let mut acc = KahanSum::default();
    Zip::from(&mx).and(&my).and(&xx).and(&yy).and(&xy).for_each(|&mx, &my, &xx, &yy, &xy| {
        let vx = xx - mx * mx;
        let vy = yy - my * my;
        let cov = xy - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        acc.add(num / den);
    });
    acc.value() / mx.len() as f64
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// valid windows only, averaged over bands. Peak is 1.
pub fn ssim(x: &MultispectralImage, reference: &MultispectralImage) -> Result<f64> {
    ssim_with_peak(x, reference, 1.0)
}

pub fn ssim_with_peak(x: &MultispectralImage, reference: &MultispectralImage, peak: f64) -> Result<f64> {
    x.check_layout(reference, "ssim")?;
    let (h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dims(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let per_band: Vec<f64> = x
        .bands()
        .par_iter()
        .zip(reference.bands())
        .map(|(a, b)| ssim_plane(a.values(), b.values(), &win, peak))
        .collect();
    Ok(per_band.iter().sum::<f64>() / per_band.len() as f64)
}

/// Keys cubic convolution kernel.
pub fn keys_weight(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((t - 5.0) * t + 8.0) * t * a - 4.0 * a
    } else {
        0.0
    }
}

/// Per output index: four source indices and their weights.
fn cubic_taps(n_in: usize, s: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..n_in * s)
        .map(|i| {
            let u = (i as f64 + 0.5) / s as f64 - 0.5;
            let f = u.floor();
            let t = u - f;
            let mut w = [
                keys_weight(t + 1.0, BICUBIC_A),
                keys_weight(t, BICUBIC_A),
                keys_weight(1.0 - t, BICUBIC_A),
                keys_weight(2.0 - t, BICUBIC_A),
            ];
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            let idx = std::array::from_fn(|k| {
                Boundary::Reflective.resolve(f as isize - 1 + k as isize, n_in).expect("reflective always resolves")
            });
            (idx, w)
        })
        .collect()
}

fn bicubic_plane(x: &Array2<f64>, s: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let rt = cubic_taps(h, s);
    let ct = cubic_taps(w, s);
    let rows = Array2::from_shape_fn((h * s, w), |(i, j)| {
        let (idx, wt) = &rt[i];
        (0..4).map(|k| wt[k] * x[[idx[k], j]]).sum::<f64>()
    });
    Array2::from_shape_fn((h * s, w * s), |(i, j)| {
        let (idx, wt) = &ct[j];
        (0..4).map(|k| wt[k] * rows[[i, idx[k]]]).sum()
    })
}

/// Keys bicubic (a = -0.75) upsampling by `s` with half-pixel centres and
/// reflective edges. Pixel size is divided by `s`.
pub fn bicubic_upsample(z: &MultispectralImage, s: usize) -> Result<MultispectralImage> {
    if s == 0 {
        return Err(Error::param("upsampling factor must be >= 1"));
    }
    if s == 1 {
        return Ok(z.clone());
    }
    let planes = z.bands().par_iter().map(|b| BandPlane::new_unchecked(bicubic_plane(b.values(), s))).collect();
    z.with_bands_resampled(planes, z.pixel_size() / s as f64)
}

/// Pixel replication by `s`.
pub fn nearest_upsample(z: &MultispectralImage, s: usize) -> Result<MultispectralImage> {
    if s == 0 {
        return Err(Error::param("upsampling factor must be >= 1"));
    }
    let planes = z
        .bands()
        .iter()
        .map(|b| {
            let v = b.values();
            let (h, w) = v.dim();
            BandPlane::new_unchecked(Array2::from_shape_fn((h * s, w * s), |(i, j)| v[[i / s, j / s]]))
        })
        .collect();
    z.with_bands_resampled(planes, z.pixel_size() / s as f64)
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub image_id: String,
    pub method: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub water_area_m2: f64,
    pub reference_water_area_m2: f64,
}

impl MetricsRow {
    /// Scores `x` against `reference` on the reference grid.
    pub fn evaluate(
        image_id: &str,
        method: &str,
        x: &MultispectralImage,
        reference: &MultispectralImage,
        water_threshold: f64,
    ) -> Result<Self> {
        Ok(MetricsRow {
            image_id: image_id.to_string(),
            method: method.to_string(),
            psnr_db: psnr(x, reference, 1.0)?,
            ssim: ssim(x, reference)?,
            water_area_m2: water_area(&water_mask(x, water_threshold)?),
            reference_water_area_m2: water_area(&water_mask(reference, water_threshold)?),
        })
    }
}

pub const METRICS_HEADER: [&str; 6] =
    ["image_id", "method", "psnr_db", "ssim", "water_area_m2", "reference_water_area_m2"];

pub fn write_metrics_csv<W: io::Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.image_id.clone(),
            r.method.clone(),
            r.psnr_db.to_string(),
            r.ssim.to_string(),
            r.water_area_m2.to_string(),
            r.reference_water_area_m2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image_from(planes: Vec<Array2<f64>>) -> MultispectralImage {
        let n = planes.len();
        let bands = planes.into_iter().map(|p| BandPlane::new(p).unwrap()).collect();
        MultispectralImage::new(bands, BandName::ALL[..n].to_vec(), 10.0).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> MultispectralImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        image_from((0..4).map(|_| Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))).collect())
    }

    fn constant_bands(h: usize, w: usize, vals: [f64; 4]) -> MultispectralImage {
        image_from(vals.iter().map(|v| Array2::from_elem((h, w), *v)).collect())
    }

    #[test]
    fn ndwi_examples() {
        let x = constant_bands(3, 3, [0.1, 0.3, 0.2, 0.1]);
        assert!(ndwi(&x).unwrap().values().iter().all(|v| (v - 0.5).abs() < 1e-12));
        let x = constant_bands(3, 3, [0.1, 0.25, 0.2, 0.25]);
        assert!(ndwi(&x).unwrap().values().iter().all(|v| *v == 0.0));
        let x = constant_bands(3, 3, [0.1, 0.0, 0.2, 0.0]);
        assert!(ndwi(&x).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ndwi_bounded_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let planes: Vec<_> = (0..4).map(|_| Array2::from_shape_fn((20, 20), |_| rng.random_range(-0.3..1.0))).collect();
        let x = image_from(planes.clone());
        let nd = ndwi(&x).unwrap();
        assert!(nd.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        let scaled = image_from(vec![planes[0].clone(), &planes[1] * 3.0, planes[2].clone(), &planes[3] * 3.0]);
        let nd2 = ndwi(&scaled).unwrap();
        Zip::from(nd.values()).and(nd2.values()).for_each(|a, b| assert!((a - b).abs() < 1e-12));
    }

    #[test]
    fn ndwi_missing_band() {
        let x = MultispectralImage::new(
            vec![BandPlane::zeros(2, 2), BandPlane::zeros(2, 2)],
            vec![BandName::Blue, BandName::Red],
            10.0,
        )
        .unwrap();
        assert!(matches!(ndwi(&x), Err(Error::UnknownBand(_))));
    }

    #[test]
    fn threshold_and_area() {
        let zeros = BandPlane::zeros(10, 10);
        assert_eq!(threshold_water(&zeros, 0.0, 10.0).unwrap().water_pixels(), 0);
        let half = BandPlane::filled(10, 10, 0.5);
        let m = threshold_water(&half, 0.0, 10.0).unwrap();
        assert_eq!(water_area(&m), 10_000.0);
        assert_eq!(threshold_water(&half, 1.0, 10.0).unwrap().water_pixels(), 0);
        assert!(threshold_water(&half, f64::NAN, 10.0).is_err());
    }

    #[test]
    fn area_monotone_in_threshold() {
        let x = random_image(30, 30, 9);
        let nd = ndwi(&x).unwrap();
        let mut last = f64::INFINITY;
        for thr in [-0.8, -0.4, 0.0, 0.2, 0.6, 1.0] {
            let a = water_area(&threshold_water(&nd, thr, 10.0).unwrap());
            assert!(a <= last);
            last = a;
        }
    }

    #[test]
    fn psnr_analytic_cases() {
        let r = random_image(16, 16, 1).clamped(0.0, 0.8);
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), PSNR_CAP_DB);
        let p20 = psnr(&r.map_bands(|v| v + 0.1), &r, 1.0).unwrap();
        let p40 = psnr(&r.map_bands(|v| v + 0.01), &r, 1.0).unwrap();
        assert!((p20 - 20.0).abs() < 1e-9, "{p20}");
        assert!((p40 - 40.0).abs() < 1e-9, "{p40}");
        let y = random_image(16, 16, 2);
        assert_eq!(psnr(&r, &y, 1.0).unwrap(), psnr(&y, &r, 1.0).unwrap());
    }

    #[test]
    fn psnr_drops_with_added_noise() {
        let r = random_image(24, 24, 3);
        let mut worse = 0;
        for seed in 0..20 {
            let x = crate::forward::add_noise(&r, 0.02, seed).unwrap();
            let y = crate::forward::add_noise(&x, 0.02, 1000 + seed).unwrap();
            if psnr(&y, &r, 1.0).unwrap() < psnr(&x, &r, 1.0).unwrap() {
                worse += 1;
            }
        }
        assert!(worse >= 19);
    }

    /// Direct double loop: explicit window means and central moments.
    fn ssim_oracle(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let k = 11usize;
        let mut g = vec![vec![0.0; k]; k];
        let mut tot = 0.0;
        for a in 0..k {
            for b in 0..k {
                let (da, db) = (a as f64 - 5.0, b as f64 - 5.0);
                g[a][b] = (-(da * da + db * db) / (2.0 * 1.5 * 1.5)).exp();
                tot += g[a][b];
            }
        }
        let (h, w) = x.dim();
        let (c1, c2) = (1e-4, 9e-4);
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..=h - k {
            for j in 0..=w - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        mx += g[a][b] / tot * x[[i + a, j + b]];
                        my += g[a][b] / tot * y[[i + a, j + b]];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        let wgt = g[a][b] / tot;
                        let dx = x[[i + a, j + b]] - mx;
                        let dy = y[[i + a, j + b]] - my;
                        vx += wgt * dx * dx;
                        vy += wgt * dy * dy;
                        cxy += wgt * dx * dy;
                    }
                }
                sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        sum / count as f64
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        let x = random_image(64, 64, 11);
        let y = random_image(64, 64, 12).add_scaled(1.0, &x).unwrap().scaled(0.5);
        let got = ssim(&x, &y).unwrap();
        let want: f64 = x.bands().iter().zip(y.bands()).map(|(a, b)| ssim_oracle(a.values(), b.values())).sum::<f64>() / 4.0;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn ssim_identity_symmetry_and_inversion() {
        let x = random_image(32, 40, 13);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        let y = random_image(32, 40, 14);
        assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
        let inv = x.map_bands(|v| v.mapv(|t| 1.0 - t));
        assert!(ssim(&inv, &x).unwrap() < 1.0);
        assert!(ssim(&random_image(8, 40, 1), &random_image(8, 40, 2)).is_err());
    }

    #[test]
    fn bicubic_identity_and_constants() {
        let x = random_image(7, 9, 21);
        assert_eq!(bicubic_upsample(&x, 1).unwrap(), x);
        let c = constant_bands(5, 6, [0.3, 0.7, 0.1, 0.9]);
        let up = bicubic_upsample(&c, 3).unwrap();
        assert_eq!(up.dims(), (15, 18));
        assert_eq!(up.pixel_size(), 10.0 / 3.0);
        for (b, v) in up.bands().iter().zip([0.3, 0.7, 0.1, 0.9]) {
            assert!(b.values().iter().all(|t| (t - v).abs() < 1e-14));
        }
    }

    #[test]
    fn bicubic_is_linear() {
        let x = random_image(6, 5, 31);
        let y = random_image(6, 5, 32);
        let lhs = bicubic_upsample(&x.add_scaled(-2.5, &y).unwrap(), 3).unwrap();
        let rhs = bicubic_upsample(&x, 3).unwrap().add_scaled(-2.5, &bicubic_upsample(&y, 3).unwrap()).unwrap();
        assert!(lhs.distance_sq(&rhs).unwrap().sqrt() < 1e-12);
    }

    /// Per-pixel scalar evaluation of the separable Keys interpolant.
    fn keys_oracle(x: &Array2<f64>, s: usize, i: usize, j: usize) -> f64 {
        fn k(t: f64) -> f64 {
            let a = -0.75;
            let t = t.abs();
            if t <= 1.0 {
                (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
            } else if t < 2.0 {
                a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
            } else {
                0.0
            }
        }
        fn reflect(mut p: i64, n: i64) -> usize {
            while p < 0 || p >= n {
                p = if p < 0 { -p - 1 } else { 2 * n - p - 1 };
            }
            p as usize
        }
        let (h, w) = x.dim();
        let u = (i as f64 + 0.5) / s as f64 - 0.5;
        let v = (j as f64 + 0.5) / s as f64 - 0.5;
        let mut acc = 0.0;
        for p in (u.floor() as i64 - 1)..=(u.floor() as i64 + 2) {
            for q in (v.floor() as i64 - 1)..=(v.floor() as i64 + 2) {
                acc += k(u - p as f64) * k(v - q as f64) * x[[reflect(p, h as i64), reflect(q, w as i64)]];
            }
        }
        acc
    }

    #[test]
    fn bicubic_matches_scalar_oracle_on_ramp() {
        let ramp = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64 / 15.0);
        let x = image_from(vec![ramp.clone(); 4]);
        let up = bicubic_upsample(&x, 3).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let want = keys_oracle(&ramp, 3, i, j);
                assert!((up.bands()[0].get(i, j) - want).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn nearest_replicates() {
        let x = random_image(3, 4, 41);
        let up = nearest_upsample(&x, 3).unwrap();
        assert_eq!(up.dims(), (9, 12));
        assert_eq!(up.bands()[2].get(7, 5), x.bands()[2].get(2, 1));
    }

    #[test]
    fn metrics_csv_header() {
        let x = random_image(16, 16, 1);
        let row = MetricsRow::evaluate("a", "bicubic", &x, &x, 0.0).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("image_id,method,psnr_db,ssim,water_area_m2,reference_water_area_m2\n"));
        assert!(text.contains("a,bicubic,99,"));
    }
}
