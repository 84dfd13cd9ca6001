//! `prox_{lambda TV}` by projected gradient on the dual of the isotropic TV
//! problem:
//!
//! ```text
//! p <- Proj_{|p| <= 1}( p + (1/8) grad(div p - f / lambda) )
//! u  = f - lambda div p
//! ```
//!
//! The step `1/8` is `1 / |grad|^2` for forward differences on a 2-D grid.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::raster::{BandPlane, MultispectralImage};

const DUAL_STEP: f64 = 1.0 / 8.0;

/// Forward differences with a zero last column (x) and last row (y).
pub fn gradient(u: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = u.dim();
    let gx = Array2::from_shape_fn((h, w), |(i, j)| if j + 1 < w { u[[i, j + 1]] - u[[i, j]] } else { 0.0 });
    let gy = Array2::from_shape_fn((h, w), |(i, j)| if i + 1 < h { u[[i + 1, j]] - u[[i, j]] } else { 0.0 });
    (gx, gy)
}

/// `-grad^T`, so that `<grad u, p> = -<u, div p>`.
pub fn divergence(px: &Array2<f64>, py: &Array2<f64>) -> Array2<f64> {
    let (h, w) = px.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let x = if j + 1 < w { px[[i, j]] } else { 0.0 } - if j > 0 { px[[i, j - 1]] } else { 0.0 };
        let y = if i + 1 < h { py[[i, j]] } else { 0.0 } - if i > 0 { py[[i - 1, j]] } else { 0.0 };
        x + y
    })
}

/// Isotropic total variation `sum sqrt(dx^2 + dy^2)`.
pub fn total_variation(u: &Array2<f64>) -> f64 {
    let (gx, gy) = gradient(u);
    let mut acc = crate::sum::KahanSum::default();
    Zip::from(&gx).and(&gy).for_each(|a, b| acc.add(a.hypot(*b)));
    acc.value()
}

/// `1/2 |u - f|^2 + lambda TV(u)`.
pub fn tv_objective(u: &Array2<f64>, f: &Array2<f64>, lambda: f64) -> f64 {
    let fid: f64 = crate::sum::compensated(Zip::from(u).and(f).map_collect(|a, b| (a - b) * (a - b)).into_iter());
    0.5 * fid + lambda * total_variation(u)
}

/// Runs `iters` dual steps; every `every` iterations (and at the end) the
/// primal objective of the current estimate is recorded.
pub fn tv_prox_plane_traced(f: &Array2<f64>, lambda: f64, iters: usize, every: usize) -> (Array2<f64>, Vec<f64>) {
    if lambda <= 0.0 {
        return (f.clone(), vec![tv_objective(f, f, 0.0)]);
    }
    let (h, w) = f.dim();
    let mut px = Array2::<f64>::zeros((h, w));
    let mut py = Array2::<f64>::zeros((h, w));
    let inv_lambda = 1.0 / lambda;
    let mut checkpoints = Vec::new();
    let primal = |px: &Array2<f64>, py: &Array2<f64>| f - &(divergence(px, py) * lambda);
    for k in 1..=iters.max(1) {
        let mut g = divergence(&px, &py);
        Zip::from(&mut g).and(f).for_each(|g, f| *g -= f * inv_lambda);
        let (gx, gy) = gradient(&g);
        Zip::from(&mut px).and(&mut py).and(&gx).and(&gy).for_each(|px, py, gx, gy| {
            let (nx, ny) = (*px + DUAL_STEP * gx, *py + DUAL_STEP * gy);
            let norm = nx.hypot(ny).max(1.0);
            *px = nx / norm;
            *py = ny / norm;
        });
        if every > 0 && (k % every == 0 || k == iters) {
            checkpoints.push(tv_objective(&primal(&px, &py), f, lambda));
        }
    }
    (primal(&px, &py), checkpoints)
}

pub fn tv_prox_plane(f: &Array2<f64>, lambda: f64, iters: usize) -> Array2<f64> {
    tv_prox_plane_traced(f, lambda, iters, 0).0
}

/// Band-wise approximate `prox_{lambda TV}` with a fixed iteration budget.
pub fn tv_prox(x: &MultispectralImage, lambda: f64, iters: usize) -> MultispectralImage {
    if lambda == 0.0 {
        return x.clone();
    }
    let planes = x
        .bands()
        .par_iter()
        .map(|b| BandPlane::new_unchecked(tv_prox_plane(b.values(), lambda, iters)))
        .collect();
    x.with_bands(planes).expect("layout preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::tests::random_image;
    use crate::raster::BandName;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_image(n: usize, noise: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |(_, j)| {
            let base = if j < n / 2 { 0.2 } else { 0.7 };
            base + noise * rng.random_range(-1.0..1.0)
        })
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Array2::from_shape_fn((7, 9), |_| rng.random_range(-1.0..1.0));
        let px = Array2::from_shape_fn((7, 9), |_| rng.random_range(-1.0..1.0));
        let py = Array2::from_shape_fn((7, 9), |_| rng.random_range(-1.0..1.0));
        let (gx, gy) = gradient(&u);
        let lhs = (&gx * &px).sum() + (&gy * &py).sum();
        let rhs = -(&u * &divergence(&px, &py)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_is_identity() {
        let x = random_image(9, 9, 1);
        assert_eq!(tv_prox(&x, 0.0, 10), x);
    }

    #[test]
    fn huge_lambda_flattens_to_band_mean() {
        let x = random_image(8, 8, 2);
        let y = tv_prox(&x, 1e4, 4000);
        for (a, b) in x.bands().iter().zip(y.bands()) {
            let mean = a.mean();
            for v in b.values() {
                assert!((v - mean).abs() < 1e-3, "{v} vs {mean}");
            }
        }
    }

    #[test]
    fn step_image_matches_long_run_reference() {
        let f = step_image(16, 0.05, 11);
        // The dual projected gradient converges sublinearly, so compare the
        // primal objective tightly and the pixels loosely.
        let short = tv_prox_plane(&f, 0.1, 2000);
        let long = tv_prox_plane(&f, 0.1, 20000);
        let (a, b) = (tv_objective(&short, &f, 0.1), tv_objective(&long, &f, 0.1));
        assert!(a >= b - 1e-12 && (a - b) / b < 1e-4, "objective {a} vs {b}");
        let err = (&short - &long).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 2e-3, "max deviation {err}");
    }

    #[test]
    fn reduces_total_variation_of_noisy_step() {
        let f = step_image(24, 0.1, 5);
        let x = MultispectralImage::new(vec![BandPlane::new(f.clone()).unwrap()], vec![BandName::Green], 10.0).unwrap();
        let y = crate::denoisers::DenoiserSpec::tv_prox().denoise(&x, 0.1).unwrap();
        assert!(total_variation(y.bands()[0].values()) < total_variation(&f));
    }

    #[test]
    fn checkpoint_objective_is_non_increasing() {
        for seed in 0..5 {
            let f = step_image(20, 0.15, seed);
            let (_, trace) = tv_prox_plane_traced(&f, 0.08, 300, 10);
            assert_eq!(trace.len(), 30);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn never_increases_tv() {
        for seed in 0..10 {
            let x = random_image(12, 15, 40 + seed);
            let y = tv_prox(&x, 0.05 * (seed + 1) as f64, 50);
            for (a, b) in x.bands().iter().zip(y.bands()) {
                assert!(total_variation(b.values()) <= total_variation(a.values()) + 1e-9);
            }
        }
    }
}
