//! Procedural river scenes and synthetic LR datasets.
//!
//! Seeds: every random draw derives from one base seed through
//! [`derive_seed`]`(base, stream, index)`, a SplitMix64 hash of the base seed,
//! a stream tag ([`SCENE_STREAM`], [`NOISE_STREAM`]) and the item index. Items
//! are indexed in sorted file-name order, so results do not depend on
//! scheduling.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use landsr_core::raster::io::write_atomic;
use landsr_core::raster::{load_image, save_image, HR_PIXEL_SIZE_M};
use landsr_core::{BandName, BandPlane, Error, ForwardModel, MultispectralImage, Result};
use log::warn;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const SCENE_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of `stream` under `base`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}

/// Reflectance spectra in band order blue, green, red, nir.
const WATER: [f64; 4] = [0.12, 0.15, 0.08, 0.03];
const LAND_COVERS: [[f64; 4]; 4] = [
    [0.05, 0.11, 0.06, 0.42], // vegetation
    [0.07, 0.12, 0.09, 0.33], // sparse grass
    [0.16, 0.21, 0.25, 0.33], // bare soil
    [0.21, 0.24, 0.26, 0.30], // sand and gravel bars
];

struct Channel {
    offset: f64,
    amp: [f64; 2],
    wavelength: [f64; 2],
    phase: [f64; 3],
    half_width: f64,
    width_wobble: f64,
}

impl Channel {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64, half_width: f64) -> Self {
        Channel {
            offset: rng.random_range(0.3..0.7) * w,
            amp: [rng.random_range(0.05..0.15) * w, rng.random_range(0.01..0.05) * w],
            wavelength: [rng.random_range(0.7..1.6) * h, rng.random_range(0.15..0.35) * h],
            phase: [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ],
            half_width,
            width_wobble: rng.random_range(0.1..0.35),
        }
    }

    /// Fraction of the pixel `(r, c)` covered by water, with a one-pixel
    /// linear transition at the banks.
    fn coverage(&self, r: f64, c: f64, h: f64) -> f64 {
        use std::f64::consts::TAU;
        let centre = self.offset
            + self.amp[0] * (TAU * r / self.wavelength[0] + self.phase[0]).sin()
            + self.amp[1] * (TAU * r / self.wavelength[1] + self.phase[1]).sin();
        let hw = self.half_width * (1.0 + self.width_wobble * (TAU * r / h + self.phase[2]).sin());
        (hw - (c - centre).abs() + 0.5).clamp(0.0, 1.0)
    }
}

/// A four-band HR scene on the 10 m grid: a meandering river (sometimes with
/// a side channel) over a patchwork of land covers with smooth texture.
pub fn river_scene(height: usize, width: usize, seed: u64) -> MultispectralImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let transpose = rng.random_bool(0.5);
    let (rows, cols) = if transpose { (w, h) } else { (h, w) };
    let main_width = rng.random_range(0.03..0.07) * cols;
    let mut channels = vec![Channel::random(&mut rng, rows, cols, main_width)];
    if rng.random_bool(0.5) {
        let side_width = rng.random_range(0.015..0.03) * cols;
        channels.push(Channel::random(&mut rng, rows, cols, side_width));
    }

    let block = rng.random_range(18..40usize);
    let by = height.div_ceil(block) + 1;
    let bx = width.div_ceil(block) + 1;
    let jitter = (rng.random_range(0..block), rng.random_range(0..block));
    let covers: Vec<usize> = (0..by * bx).map(|_| rng.random_range(0..LAND_COVERS.len())).collect();
    let tint: Vec<f64> = (0..by * bx).map(|_| rng.random_range(0.9..1.1)).collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.01..0.08),
                rng.random_range(0.01..0.08),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.01..0.03),
            )
        })
        .collect();
    let turbidity = rng.random_range(0.9..1.2);

    let mut planes = vec![Array2::<f64>::zeros((height, width)); 4];
    for i in 0..height {
        for j in 0..width {
            let (r, c) = if transpose { (j as f64, i as f64) } else { (i as f64, j as f64) };
            let water = channels.iter().map(|ch| ch.coverage(r, c, rows)).fold(0.0, f64::max);
            let cell = ((i + jitter.0) / block) * bx + (j + jitter.1) / block;
            let land = &LAND_COVERS[covers[cell]];
            let texture: f64 =
                waves.iter().map(|(fy, fx, ph, a)| a * (fy * i as f64 + fx * j as f64 + ph).sin()).sum();
            for b in 0..4 {
                let l = land[b] * tint[cell] + texture;
                let wv = WATER[b] * if b < 3 { turbidity } else { 1.0 };
                planes[b][[i, j]] = (water * wv + (1.0 - water) * l).clamp(0.0, 1.0);
            }
        }
    }
    let bands = planes.into_iter().map(BandPlane::new_unchecked).collect();
    MultispectralImage::new(bands, BandName::ALL.to_vec(), HR_PIXEL_SIZE_M).expect("scene is well formed")
}

/// Scene `index` of a set seeded by `base`.
pub fn scene_for(base: u64, index: u64, height: usize, width: usize) -> MultispectralImage {
    river_scene(height, width, derive_seed(base, SCENE_STREAM, index))
}

/// Writes `count` scenes as `scene_0000.msr`, ... and returns their paths.
pub fn write_scenes(count: usize, height: usize, width: usize, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let path = out_dir.join(format!("scene_{i:04}.msr"));
            save_image(&scene_for(seed, i as u64, height, width), &path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEntry {
    pub id: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticManifest {
    pub entries: Vec<SyntheticEntry>,
    /// `(file, reason)` for inputs that were skipped.
    pub skipped: Vec<(PathBuf, String)>,
}

impl SyntheticManifest {
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "hr_path", "lr_path", "noise_seed"])?;
        for e in &self.entries {
            w.write_record([
                e.id.clone(),
                e.hr_path.display().to_string(),
                e.lr_path.display().to_string(),
                e.noise_seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::Format(format!("manifest row has {} fields, expected 4", rec.len())));
            }
            let noise_seed = rec[3].parse().map_err(|_| Error::Format(format!("bad noise_seed `{}`", &rec[3])))?;
            entries.push(SyntheticEntry {
                id: rec[0].to_string(),
                hr_path: PathBuf::from(&rec[1]),
                lr_path: PathBuf::from(&rec[2]),
                noise_seed,
            });
        }
        Ok(SyntheticManifest { entries, skipped: Vec::new() })
    }
}

/// Sorted `.msr` files in `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "msr"))
        .collect();
    files.sort();
    Ok(files)
}

/// Degrades every HR image in `hr_dir` with `m` plus noise and writes
/// `<stem>_lr.msr` files and `manifest.csv` into `out_dir`.
///
/// Unreadable inputs and grids not divisible by the scale are skipped with a
/// warning. The noise seed of the `i`-th file (sorted by name) is
/// `derive_seed(seed, NOISE_STREAM, i)`.
pub fn make_synthetic(hr_dir: &Path, m: &ForwardModel, seed: u64, out_dir: &Path) -> Result<SyntheticManifest> {
    let files = list_images(hr_dir)?;
    fs::create_dir_all(out_dir)?;
    let results: Vec<std::result::Result<SyntheticEntry, (PathBuf, String)>> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let fail = |e: Error| (path.clone(), e.to_string());
            let hr = load_image(path).map_err(fail)?;
            m.lr_dims(hr.dims()).map_err(fail)?;
            let noise_seed = derive_seed(seed, NOISE_STREAM, i as u64);
            let lr = m.degrade(&hr, noise_seed).map_err(fail)?;
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let lr_path = out_dir.join(format!("{id}_lr.msr"));
            save_image(&lr, &lr_path).map_err(fail)?;
            Ok(SyntheticEntry { id, hr_path: path.clone(), lr_path, noise_seed })
        })
        .collect();
    let mut manifest = SyntheticManifest::default();
    for r in results {
        match r {
            Ok(e) => manifest.entries.push(e),
            Err((p, reason)) => {
                warn!("skipping {}: {reason}", p.display());
                manifest.skipped.push((p, reason));
            }
        }
    }
    let mut buf = Vec::new();
    manifest.write_csv(&mut buf)?;
    write_atomic(&out_dir.join("manifest.csv"), &buf)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use landsr_core::analysis::{ndwi, water_area, water_mask};

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(7, NOISE_STREAM, i)).collect();
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_ne!(derive_seed(7, SCENE_STREAM, 0), derive_seed(7, NOISE_STREAM, 0));
        assert_eq!(a[3], derive_seed(7, NOISE_STREAM, 3));
    }

    #[test]
    fn scenes_are_deterministic_valid_and_wet() {
        let a = scene_for(1, 0, 90, 90);
        assert_eq!(a, scene_for(1, 0, 90, 90));
        assert_ne!(a, scene_for(1, 1, 90, 90));
        for i in 0..10 {
            let s = scene_for(3, i, 120, 120);
            assert!(s.bands().iter().all(|b| b.values().iter().all(|v| (0.0..=1.0).contains(v))));
            let nd = ndwi(&s).unwrap();
            assert!(nd.values().iter().all(|v| (-1.0..=1.0).contains(v)));
            let frac = water_area(&water_mask(&s, 0.0).unwrap()) / (120.0 * 120.0 * 100.0);
            assert!((0.02..0.5).contains(&frac), "scene {i}: water fraction {frac}");
        }
    }
}
