use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::{BandPlane, MultispectralImage};
use crate::{Error, Result};

/// Adds i.i.d. `N(0, sigma^2)` noise to every pixel of every band.
///
/// Samples are drawn from a ChaCha8 stream seeded with `seed`, band by band in
/// row-major order, so the output depends only on `(x, sigma, seed)`.
pub fn add_noise(x: &MultispectralImage, sigma: f64, seed: u64) -> Result<MultispectralImage> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::param(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes = x
        .bands()
        .iter()
        .map(|b| {
            let mut v = b.values().clone();
            v.iter_mut().for_each(|p| *p += normal.sample(&mut rng));
            BandPlane::new_unchecked(v)
        })
        .collect();
    x.with_bands(planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BandName;

    #[test]
    fn zero_sigma_is_identity() {
        let x = MultispectralImage::zeros(5, 5, &BandName::ALL, 10.0).unwrap();
        assert_eq!(add_noise(&x, 0.0, 3).unwrap(), x);
    }

    #[test]
    fn deterministic_for_seed() {
        let x = MultispectralImage::zeros(8, 8, &BandName::ALL, 10.0).unwrap();
        let a = add_noise(&x, 0.1, 42).unwrap();
        let b = add_noise(&x, 0.1, 42).unwrap();
        let c = add_noise(&x, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_std_matches_sigma() {
        let x = MultispectralImage::zeros(300, 300, &BandName::ALL, 10.0).unwrap();
        let y = add_noise(&x, 0.09, 2024).unwrap();
        let n = 4.0 * 300.0 * 300.0;
        let mean: f64 = y.bands().iter().map(|b| b.values().sum()).sum::<f64>() / n;
        let var = y.norm_sq() / n - mean * mean;
        let std = var.sqrt();
        assert!((0.088..=0.092).contains(&std), "std = {std}");
    }

    #[test]
    fn negative_sigma_rejected() {
        let x = MultispectralImage::zeros(2, 2, &[BandName::Red], 10.0).unwrap();
        assert!(add_noise(&x, -0.1, 0).is_err());
    }
}
