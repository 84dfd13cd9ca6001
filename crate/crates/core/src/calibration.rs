//! Forward-model calibration from data: noise level by wavelet MAD, blur
//! width by residual minimisation over HR/LR pairs, and time-based pairing of
//! acquisitions.

use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Utc};
use ndarray::Zip;
use rayon::prelude::*;

use crate::forward::{Boundary, ForwardModel, Kernel};
use crate::raster::{BandPlane, MultispectralImage};
use crate::sum::KahanSum;
use crate::wavelet;
use crate::{Error, Result};

/// `median(|N(0, 1)|)`: converts a median absolute deviation to a standard
/// deviation.
pub const MAD_TO_SIGMA: f64 = 0.6745;

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let (_, hi, _) = values.select_nth_unstable_by(n / 2, cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Robust noise estimate `median(|HH|) / 0.6745` on the level-1 diagonal
/// Haar details. Odd trailing rows/columns are trimmed first.
pub fn estimate_noise_mad(plane: &BandPlane) -> Result<f64> {
    let (h, w) = plane.dims();
    if h < 2 || w < 2 {
        return Err(Error::dims(format!("MAD estimate needs at least 2x2 pixels, got {h}x{w}")));
    }
    let block = wavelet::trim_even(plane.values().view());
    let mut hh: Vec<f64> = wavelet::forward_level(block).hh.iter().map(|d| d.abs()).collect();
    Ok(median(&mut hh) / MAD_TO_SIGMA)
}

/// Per-band MAD estimates and their mean (the single sigma a
/// [`ForwardModel`] carries).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub per_band: Vec<f64>,
    pub mean: f64,
}

pub fn estimate_image_noise(img: &MultispectralImage) -> Result<NoiseEstimate> {
    let per_band = img.bands().iter().map(estimate_noise_mad).collect::<Result<Vec<_>>>()?;
    let mean = per_band.iter().sum::<f64>() / per_band.len() as f64;
    Ok(NoiseEstimate { per_band, mean })
}

/// An HR acquisition and the LR acquisition it is compared against.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub hr: MultispectralImage,
    pub lr: MultispectralImage,
    pub acquisition_gap_days: f64,
}

impl PairedSample {
    pub fn new(hr: MultispectralImage, lr: MultispectralImage, acquisition_gap_days: f64, scale: usize) -> Result<Self> {
        let (h, w) = hr.dims();
        if scale == 0 || lr.dims().0 * scale != h || lr.dims().1 * scale != w {
            return Err(Error::dims(format!(
                "HR {:?} is not {scale} x LR {:?}",
                hr.dims(),
                lr.dims()
            )));
        }
        if hr.band_names() != lr.band_names() {
            return Err(Error::dims(format!(
                "band mismatch: HR {:?} vs LR {:?}",
                hr.band_names(),
                lr.band_names()
            )));
        }
        if !(acquisition_gap_days.is_finite() && acquisition_gap_days >= 0.0) {
            return Err(Error::validation(format!("acquisition gap must be >= 0, got {acquisition_gap_days}")));
        }
        Ok(PairedSample { hr, lr, acquisition_gap_days })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCalibration {
    pub kernel: Kernel,
    pub residual: f64,
    /// `(sigma, residual)` in grid order.
    pub table: Vec<(f64, f64)>,
}

impl KernelCalibration {
    pub fn write_table_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sigma", "residual"])?;
        for (s, r) in &self.table {
            w.write_record([s.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Summed squared residual `sum_pairs sum_bands |A_phi x_hr - z_lr|^2`.
fn pair_residual(model: &ForwardModel, pairs: &[PairedSample]) -> Result<f64> {
    let mut acc = KahanSum::default();
    for p in pairs {
        let pred = model.apply(&p.hr)?;
        for (a, b) in pred.bands().iter().zip(p.lr.bands()) {
            Zip::from(a.values()).and(b.values()).for_each(|u, v| {
                let d = u - v;
                acc.add(d * d);
            });
        }
    }
    Ok(acc.value())
}

/// Grid search over Gaussian widths at a fixed support size.
///
/// Residuals within `1e-12` of the LR data energy of the best value are
/// treated as ties and resolved toward the smaller sigma.
pub fn calibrate_kernel(
    pairs: &[PairedSample],
    size: usize,
    sigma_grid: &[f64],
    scale: usize,
    boundary: Boundary,
) -> Result<KernelCalibration> {
    if pairs.is_empty() {
        return Err(Error::param("kernel calibration needs at least one pair"));
    }
    if sigma_grid.is_empty() {
        return Err(Error::param("kernel calibration needs a non-empty sigma grid"));
    }
    for p in pairs {
        let (h, w) = p.hr.dims();
        if p.lr.dims() != (h / scale.max(1), w / scale.max(1)) || h % scale.max(1) != 0 || w % scale.max(1) != 0 {
            return Err(Error::dims(format!(
                "pair HR {:?} / LR {:?} inconsistent with s = {scale}",
                p.hr.dims(),
                p.lr.dims()
            )));
        }
    }
    let table: Vec<(f64, f64)> = sigma_grid
        .par_iter()
        .map(|&sigma| {
            let model = ForwardModel::new(Kernel::gaussian(size, sigma)?, scale, 0.0, boundary)?;
            Ok((sigma, pair_residual(&model, pairs)?))
        })
        .collect::<Result<_>>()?;

    let energy = pairs.iter().map(|p| p.lr.norm_sq()).sum::<f64>();
    let tie_tol = 1e-12 * energy.max(f64::MIN_POSITIVE);
    let min_res = table.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let (sigma, residual) = table
        .iter()
        .filter(|(_, r)| *r <= min_res + tie_tol)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .copied()
        .expect("grid is non-empty");
    Ok(KernelCalibration { kernel: Kernel::gaussian(size, sigma)?, residual, table })
}

/// One acquisition in a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub id: String,
    pub path: PathBuf,
    pub timestamp: DateTime<Utc>,
}

impl Acquisition {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>, timestamp: DateTime<Utc>) -> Self {
        Acquisition { id: id.into(), path: path.into(), timestamp }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimePair {
    pub hr_id: String,
    pub lr_id: String,
    pub gap_days: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pairing {
    /// Accepted pairs, ordered by LR acquisition time.
    pub pairs: Vec<TimePair>,
    pub unmatched_hr: Vec<String>,
    pub unmatched_lr: Vec<String>,
}

fn gap_days(a: &DateTime<Utc>, b: &DateTime<Utc>) -> f64 {
    (*a - *b).num_milliseconds().unsigned_abs() as f64 / 86_400_000.0
}

/// Greedy nearest-first matching: all (LR, HR) candidates within `max_gap_days`
/// are visited by increasing gap (ties: earlier LR, then earlier HR) and
/// accepted when both sides are still free.
pub fn pair_by_time(hr: &[Acquisition], lr: &[Acquisition], max_gap_days: f64) -> Pairing {
    let mut candidates = Vec::new();
    for (li, l) in lr.iter().enumerate() {
        for (hi, h) in hr.iter().enumerate() {
            let gap = gap_days(&l.timestamp, &h.timestamp);
            if gap <= max_gap_days {
                candidates.push((gap, li, hi));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| lr[a.1].timestamp.cmp(&lr[b.1].timestamp))
            .then(a.1.cmp(&b.1))
            .then_with(|| hr[a.2].timestamp.cmp(&hr[b.2].timestamp))
            .then(a.2.cmp(&b.2))
    });
    let mut hr_used = vec![false; hr.len()];
    let mut lr_used = vec![false; lr.len()];
    let mut accepted = Vec::new();
    for (gap, li, hi) in candidates {
        if !lr_used[li] && !hr_used[hi] {
            lr_used[li] = true;
            hr_used[hi] = true;
            accepted.push((li, hi, gap));
        }
    }
    accepted.sort_by(|a, b| lr[a.0].timestamp.cmp(&lr[b.0].timestamp).then(a.0.cmp(&b.0)));
    Pairing {
        pairs: accepted
            .into_iter()
            .map(|(li, hi, gap)| TimePair { hr_id: hr[hi].id.clone(), lr_id: lr[li].id.clone(), gap_days: gap })
            .collect(),
        unmatched_hr: hr.iter().zip(&hr_used).filter(|(_, u)| !**u).map(|(a, _)| a.id.clone()).collect(),
        unmatched_lr: lr.iter().zip(&lr_used).filter(|(_, u)| !**u).map(|(a, _)| a.id.clone()).collect(),
    }
}

/// Accepts RFC 3339 (`2023-05-01T10:30:00Z`), naive date-times (read as UTC)
/// and bare dates.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::<FixedOffset>::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Utc.from_utc_datetime(&t));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).unwrap()));
    }
    Err(Error::format(format!("unrecognised timestamp `{s}`")))
}

/// Reads an `id,path,iso8601_timestamp` manifest. Relative paths resolve
/// against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Acquisition>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(format!("manifest `{}` lacks column `{name}`", path.display())))
    };
    let (ci, cp, ct) = (col("id")?, col("path")?, col("iso8601_timestamp")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let p = PathBuf::from(rec.get(cp).unwrap_or("").trim());
        let p = if p.is_relative() { base.join(p) } else { p };
        out.push(Acquisition::new(rec.get(ci).unwrap_or("").trim(), p, parse_timestamp(rec.get(ct).unwrap_or(""))?));
    }
    Ok(out)
}

pub fn write_manifest<W: io::Write>(items: &[Acquisition], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "path", "iso8601_timestamp"])?;
    for a in items {
        w.write_record([a.id.as_str(), &a.path.to_string_lossy(), &a.timestamp.to_rfc3339()])?;
    }
    w.flush()?;
    Ok(())
}

impl Pairing {
    /// `hr_id,lr_id,gap_days` followed by unmatched ids, one per row, with
    /// the missing side left blank.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["hr_id", "lr_id", "gap_days"])?;
        for p in &self.pairs {
            w.write_record([p.hr_id.as_str(), p.lr_id.as_str(), &p.gap_days.to_string()])?;
        }
        for id in &self.unmatched_hr {
            w.write_record([id.as_str(), "", ""])?;
        }
        for id in &self.unmatched_lr {
            w.write_record(["", id.as_str(), ""])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BandName;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise_plane(h: usize, w: usize, sigma: f64, seed: u64) -> BandPlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        BandPlane::new(Array2::from_shape_fn((h, w), |_| n.sample(&mut rng))).unwrap()
    }

    fn day(d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 6, d, 0, 0, 0).unwrap()
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn constant_plane_has_no_noise() {
        assert_eq!(estimate_noise_mad(&BandPlane::filled(10, 10, 0.4)).unwrap(), 0.0);
        assert!(estimate_noise_mad(&BandPlane::filled(1, 10, 0.4)).is_err());
    }

    #[test]
    fn gaussian_noise_estimate_over_seeds() {
        let mean: f64 = (0..100)
            .map(|seed| estimate_noise_mad(&noise_plane(300, 300, 0.09, seed)).unwrap())
            .sum::<f64>()
            / 100.0;
        assert!((mean - 0.09).abs() / 0.09 < 0.05, "mean estimate {mean}");
    }

    #[test]
    fn ramp_is_annihilated() {
        let mean: f64 = (0..100)
            .map(|seed| {
                let n = noise_plane(300, 300, 0.05, 1000 + seed);
                let ramp = Array2::from_shape_fn((300, 300), |(i, j)| 0.001 * i as f64 + 0.002 * j as f64);
                estimate_noise_mad(&BandPlane::new(ramp + n.values()).unwrap()).unwrap()
            })
            .sum::<f64>()
            / 100.0;
        assert!((mean - 0.05).abs() / 0.05 < 0.10, "mean estimate {mean}");
    }

    #[test]
    fn odd_dims_are_trimmed() {
        let p = noise_plane(301, 299, 0.05, 5);
        let trimmed = BandPlane::new(p.values().slice(ndarray::s![..300, ..298]).to_owned()).unwrap();
        assert_eq!(estimate_noise_mad(&p).unwrap(), estimate_noise_mad(&trimmed).unwrap());
    }

    #[test]
    fn mad_scale_and_shift() {
        let p = noise_plane(64, 64, 0.1, 9);
        let base = estimate_noise_mad(&p).unwrap();
        let scaled = BandPlane::new(p.values() * 4.0).unwrap();
        assert!((estimate_noise_mad(&scaled).unwrap() - 4.0 * base).abs() < 1e-12);
        // shift by a dyadic constant keeps the arithmetic exact
        let shifted = BandPlane::new(p.values() + 0.5).unwrap();
        assert!((estimate_noise_mad(&shifted).unwrap() - base).abs() < 1e-12);
    }

    fn textured(h: usize, w: usize, seed: u64) -> MultispectralImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = rand_distr::Uniform::new(0.0, 1.0).unwrap();
        let bands = (0..4)
            .map(|_| BandPlane::new(Array2::from_shape_fn((h, w), |_| u.sample(&mut rng))).unwrap())
            .collect();
        MultispectralImage::new(bands, BandName::ALL.to_vec(), 10.0).unwrap()
    }

    #[test]
    fn calibration_recovers_generating_sigma() {
        let truth = ForwardModel::new(Kernel::gaussian(4, 0.7).unwrap(), 3, 0.0, Boundary::Reflective).unwrap();
        let pairs: Vec<_> = (0..2)
            .map(|k| {
                let hr = textured(30, 30, k);
                let lr = truth.apply(&hr).unwrap();
                PairedSample::new(hr, lr, 0.0, 3).unwrap()
            })
            .collect();
        let cal = calibrate_kernel(&pairs, 4, &[0.3, 0.5, 0.7, 0.9, 1.1], 3, Boundary::Reflective).unwrap();
        assert_eq!(cal.kernel.sigma(), 0.7);
        assert_eq!(cal.residual, 0.0);
        assert_eq!(cal.table.len(), 5);
        let again = calibrate_kernel(&pairs, 4, &[0.3, 0.5, 0.7, 0.9, 1.1], 3, Boundary::Reflective).unwrap();
        assert_eq!(cal, again);
    }

    #[test]
    fn constant_pair_ties_toward_smallest_sigma() {
        let hr = MultispectralImage::new(vec![BandPlane::filled(12, 12, 0.3)], vec![BandName::Green], 10.0).unwrap();
        let lr = MultispectralImage::new(vec![BandPlane::filled(4, 4, 0.3)], vec![BandName::Green], 30.0).unwrap();
        let pair = PairedSample::new(hr, lr, 1.0, 3).unwrap();
        let cal = calibrate_kernel(&[pair], 4, &[1.1, 0.5, 0.9], 3, Boundary::Reflective).unwrap();
        assert_eq!(cal.kernel.sigma(), 0.5);
    }

    #[test]
    fn single_grid_point() {
        let hr = textured(9, 9, 3);
        let lr = ForwardModel::new(Kernel::gaussian(4, 0.7).unwrap(), 3, 0.0, Boundary::Reflective).unwrap().apply(&hr).unwrap();
        let pair = PairedSample::new(hr, lr, 0.0, 3).unwrap();
        let cal = calibrate_kernel(std::slice::from_ref(&pair), 4, &[1.3], 3, Boundary::Reflective).unwrap();
        assert_eq!(cal.kernel.sigma(), 1.3);
        assert_eq!(cal.table, vec![(1.3, cal.residual)]);
        assert!(cal.residual > 0.0);
    }

    #[test]
    fn calibration_input_errors() {
        assert!(calibrate_kernel(&[], 4, &[1.0], 3, Boundary::Reflective).is_err());
        let hr = textured(9, 9, 3);
        let lr = hr.crop(&crate::raster::CropWindow::new(0, 0, 3, 3)).unwrap();
        let pair = PairedSample::new(hr.clone(), lr.clone(), 0.0, 3).unwrap();
        assert!(calibrate_kernel(&[pair], 4, &[], 3, Boundary::Reflective).is_err());
        assert!(PairedSample::new(hr, lr, 0.0, 2).is_err());
    }

    #[test]
    fn pairing_respects_gap() {
        let hr = [Acquisition::new("s2", "a", day(10))];
        let p = pair_by_time(&hr, &[Acquisition::new("l8", "b", day(12))], 3.0);
        assert_eq!(p.pairs, vec![TimePair { hr_id: "s2".into(), lr_id: "l8".into(), gap_days: 2.0 }]);
        let p = pair_by_time(&hr, &[Acquisition::new("l8", "b", day(14))], 3.0);
        assert!(p.pairs.is_empty());
        assert_eq!(p.unmatched_hr, vec!["s2".to_string()]);
        assert_eq!(p.unmatched_lr, vec!["l8".to_string()]);
    }

    #[test]
    fn pairing_exhausts_hr_and_prefers_earlier_lr_on_ties() {
        let hr = [Acquisition::new("s2", "a", day(10))];
        let lr = [Acquisition::new("late", "b", day(11)), Acquisition::new("early", "c", day(9))];
        let p = pair_by_time(&hr, &lr, 3.0);
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.pairs[0].lr_id, "early");
        assert_eq!(p.unmatched_lr, vec!["late".to_string()]);
    }

    #[test]
    fn pairing_prefers_nearest() {
        let hr = [Acquisition::new("h1", "a", day(10)), Acquisition::new("h2", "a", day(12))];
        let lr = [Acquisition::new("l1", "b", day(11)), Acquisition::new("l2", "b", day(13))];
        let p = pair_by_time(&hr, &lr, 3.0);
        assert_eq!(p.pairs.len(), 2);
        assert_eq!((p.pairs[0].hr_id.as_str(), p.pairs[0].lr_id.as_str()), ("h1", "l1"));
        assert_eq!((p.pairs[1].hr_id.as_str(), p.pairs[1].lr_id.as_str()), ("h2", "l2"));
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("2021-06-10").unwrap(), day(10));
        assert_eq!(parse_timestamp("2021-06-10T00:00:00Z").unwrap(), day(10));
        assert_eq!(parse_timestamp("2021-06-10T02:00:00+02:00").unwrap(), day(10));
        assert_eq!(parse_timestamp("2021-06-10T00:00:00").unwrap(), day(10));
        assert!(parse_timestamp("June 10").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let items = vec![Acquisition::new("a", "a.msr", day(3)), Acquisition::new("b", "b.msr", day(4))];
        let path = dir.path().join("m.csv");
        write_manifest(&items, std::fs::File::create(&path).unwrap()).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].timestamp, day(4));
        assert_eq!(back[0].path, dir.path().join("a.msr"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pairs_respect_gap_and_uniqueness(
                hr_days in proptest::collection::vec(0i64..60, 0..12),
                lr_days in proptest::collection::vec(0i64..60, 0..12),
                max_gap in 0.0f64..6.0,
            ) {
                let mk = |p: &str, d: &[i64]| -> Vec<Acquisition> {
                    d.iter().enumerate().map(|(i, &d)| Acquisition::new(format!("{p}{i}"), "x", day(1) + chrono::Duration::hours(d * 12))).collect()
                };
                let (hr, lr) = (mk("h", &hr_days), mk("l", &lr_days));
                let p = pair_by_time(&hr, &lr, max_gap);
                let mut seen = std::collections::HashSet::new();
                for pair in &p.pairs {
                    prop_assert!(pair.gap_days <= max_gap);
                    prop_assert!(seen.insert(pair.hr_id.clone()));
                    prop_assert!(seen.insert(pair.lr_id.clone()));
                }
                prop_assert_eq!(p.pairs.len() + p.unmatched_hr.len(), hr.len());
                prop_assert_eq!(p.pairs.len() + p.unmatched_lr.len(), lr.len());
            }
        }
    }
}
