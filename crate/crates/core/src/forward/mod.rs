//! The degradation operator `A = decimate_s . blur_phi`, its exact adjoint,
//! additive noise and an operator-norm estimate for step-size bounds.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::raster::{BandPlane, MultispectralImage};
use crate::{Error, Result};

mod kernel;
mod noise;

pub use kernel::{Kernel, NORMALIZATION_TOL};
pub use noise::add_noise;

/// How samples outside the grid are synthesised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum Boundary {
    /// Half-sample symmetric extension: `x[-1] = x[0]`, `x[n] = x[n-1]`.
    #[default]
    Reflective,
    Zero,
}

impl Boundary {
    /// Source index for a possibly out-of-range `idx`, or `None` when the
    /// sample is an implicit zero.
    #[inline]
    pub fn resolve(self, mut idx: isize, n: usize) -> Option<usize> {
        let n = n as isize;
        match self {
            Boundary::Zero => (0..n).contains(&idx).then_some(idx as usize),
            Boundary::Reflective => {
                while idx < 0 || idx >= n {
                    idx = if idx < 0 { -idx - 1 } else { 2 * n - idx - 1 };
                }
                Some(idx as usize)
            }
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Boundary::Reflective => "reflective",
            Boundary::Zero => "zero",
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reflective" | "symmetric" => Ok(Boundary::Reflective),
            "zero" => Ok(Boundary::Zero),
            other => Err(Error::param(format!("unknown boundary rule `{other}`"))),
        }
    }
}

/// For each output coordinate in `outputs` and each tap `a`, the source index
/// `out + anchor - a` after boundary resolution.
fn tap_table(outputs: impl Iterator<Item = usize>, k: usize, anchor: usize, n: usize, boundary: Boundary) -> Vec<Vec<Option<usize>>> {
    outputs
        .map(|i| {
            (0..k)
                .map(|a| boundary.resolve(i as isize + anchor as isize - a as isize, n))
                .collect()
        })
        .collect()
}

fn check_kernel_fits(kernel: &Kernel, h: usize, w: usize) -> Result<()> {
    if kernel.size() > h || kernel.size() > w {
        return Err(Error::dims(format!(
            "{k}x{k} kernel is larger than the {h}x{w} plane",
            k = kernel.size()
        )));
    }
    Ok(())
}

/// `(phi * x)` sampled on the rows `row_sites` and columns `col_sites`.
fn blur_at(values: &Array2<f64>, kernel: &Kernel, boundary: Boundary, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    let (h, w) = values.dim();
    let (k, c) = (kernel.size(), kernel.anchor());
    let taps = kernel.taps();
    let rt = tap_table(rows.iter().copied(), k, c, h, boundary);
    let ct = tap_table(cols.iter().copied(), k, c, w, boundary);
    Array2::from_shape_fn((rows.len(), cols.len()), |(p, q)| {
        let mut acc = 0.0;
        for (a, r) in rt[p].iter().enumerate() {
            let Some(r) = *r else { continue };
            for (b, col) in ct[q].iter().enumerate() {
                if let Some(col) = *col {
                    acc += taps[[a, b]] * values[[r, col]];
                }
            }
        }
        acc
    })
}

/// Same-size 2-D convolution: `out[i, j] = sum_ab phi[a, b] x[i + c - a, j + c - b]`.
pub fn convolve(plane: &BandPlane, kernel: &Kernel, boundary: Boundary) -> Result<BandPlane> {
    let (h, w) = plane.dims();
    check_kernel_fits(kernel, h, w)?;
    let rows: Vec<usize> = (0..h).collect();
    let cols: Vec<usize> = (0..w).collect();
    Ok(BandPlane::new_unchecked(blur_at(plane.values(), kernel, boundary, &rows, &cols)))
}

/// Pure decimation: `out[i, j] = in[s i, s j]`.
pub fn downsample(plane: &BandPlane, s: usize) -> Result<BandPlane> {
    if s == 0 {
        return Err(Error::param("decimation factor must be >= 1"));
    }
    let (h, w) = plane.dims();
    if h % s != 0 || w % s != 0 {
        return Err(Error::dims(format!("{h}x{w} is not divisible by {s}")));
    }
    let v = plane.values();
    Ok(BandPlane::new_unchecked(Array2::from_shape_fn((h / s, w / s), |(i, j)| v[[s * i, s * j]])))
}

/// Blur kernel, decimation factor, noise level and boundary rule: the
/// operator `A` of `z = A x + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    kernel: Kernel,
    scale: usize,
    noise_sigma: f64,
    boundary: Boundary,
}

impl ForwardModel {
    pub fn new(kernel: Kernel, scale: usize, noise_sigma: f64, boundary: Boundary) -> Result<Self> {
        if scale == 0 {
            return Err(Error::param("decimation factor must be >= 1"));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::param(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        Ok(ForwardModel { kernel, scale, noise_sigma, boundary })
    }

    /// No blur, no decimation, no noise.
    pub fn identity() -> Self {
        ForwardModel { kernel: Kernel::identity(), scale: 1, noise_sigma: 0.0, boundary: Boundary::Reflective }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn with_kernel(&self, kernel: Kernel) -> Self {
        ForwardModel { kernel, ..self.clone() }
    }

    pub fn with_noise_sigma(&self, noise_sigma: f64) -> Result<Self> {
        ForwardModel::new(self.kernel.clone(), self.scale, noise_sigma, self.boundary)
    }

    /// LR grid for an HR grid of `(h, w)`.
    pub fn lr_dims(&self, (h, w): (usize, usize)) -> Result<(usize, usize)> {
        let s = self.scale;
        if h % s != 0 || w % s != 0 {
            return Err(Error::dims(format!("HR grid {h}x{w} is not divisible by s = {s}")));
        }
        check_kernel_fits(&self.kernel, h, w)?;
        Ok((h / s, w / s))
    }

    fn forward_plane(&self, values: &Array2<f64>) -> Array2<f64> {
        let (h, w) = values.dim();
        let rows: Vec<usize> = (0..h / self.scale).map(|p| p * self.scale).collect();
        let cols: Vec<usize> = (0..w / self.scale).map(|q| q * self.scale).collect();
        blur_at(values, &self.kernel, self.boundary, &rows, &cols)
    }

    /// Transpose of [`Self::forward_plane`]: zero-insertion upsampling, then
    /// scattering each LR sample through the kernel taps along the same index
    /// map the forward pass reads from.
    fn adjoint_plane(&self, values: &Array2<f64>, (h, w): (usize, usize)) -> Array2<f64> {
        let (lh, lw) = values.dim();
        let (k, c) = (self.kernel.size(), self.kernel.anchor());
        let taps = self.kernel.taps();
        let rt = tap_table((0..lh).map(|p| p * self.scale), k, c, h, self.boundary);
        let ct = tap_table((0..lw).map(|q| q * self.scale), k, c, w, self.boundary);
        let mut out = Array2::zeros((h, w));
        for p in 0..lh {
            for q in 0..lw {
                let y = values[[p, q]];
                if y == 0.0 {
                    continue;
                }
                for (a, r) in rt[p].iter().enumerate() {
                    let Some(r) = *r else { continue };
                    for (b, col) in ct[q].iter().enumerate() {
                        if let Some(col) = *col {
                            out[[r, col]] += taps[[a, b]] * y;
                        }
                    }
                }
            }
        }
        out
    }

    /// `A x`: per band, blur then keep every `s`-th sample. The pixel size
    /// grows by `s`.
    pub fn apply(&self, x: &MultispectralImage) -> Result<MultispectralImage> {
        self.lr_dims(x.dims())?;
        let planes = x
            .bands()
            .par_iter()
            .map(|b| BandPlane::new_unchecked(self.forward_plane(b.values())))
            .collect();
        x.with_bands_resampled(planes, x.pixel_size() * self.scale as f64)
    }

    /// `A^T z` onto the HR grid `hr_dims`.
    pub fn adjoint_to(&self, z: &MultispectralImage, hr_dims: (usize, usize)) -> Result<MultispectralImage> {
        let lr = self.lr_dims(hr_dims)?;
        if z.dims() != lr {
            return Err(Error::dims(format!(
                "LR image is {:?} but the model maps {:?} to {:?}",
                z.dims(),
                hr_dims,
                lr
            )));
        }
        let planes = z
            .bands()
            .par_iter()
            .map(|b| BandPlane::new_unchecked(self.adjoint_plane(b.values(), hr_dims)))
            .collect();
        z.with_bands_resampled(planes, z.pixel_size() / self.scale as f64)
    }

    /// `A^T z` onto the grid `s` times finer than `z`.
    pub fn adjoint(&self, z: &MultispectralImage) -> Result<MultispectralImage> {
        let (h, w) = z.dims();
        self.adjoint_to(z, (h * self.scale, w * self.scale))
    }

    /// Power-iteration estimate of the largest singular value of `A` on an
    /// HR grid of `hr_dims` (single band; `A` acts on bands independently).
    ///
    /// Returns `|A v_k| / |v_k|` with `v_k = (A^T A)^k v_0`, which is
    /// non-decreasing in `k`. `v_0` is a fixed pseudo-random vector.
    pub fn operator_norm(&self, hr_dims: (usize, usize), iters: usize) -> Result<f64> {
        self.lr_dims(hr_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_a_u64);
        let mut v: Array2<f64> = Array2::from_shape_fn(hr_dims, |_| StandardNormal.sample(&mut rng));
        let mut estimate = 0.0;
        for _ in 0..iters.max(1) {
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nv == 0.0 {
                return Ok(0.0);
            }
            v /= nv;
            let av = self.forward_plane(&v);
            estimate = av.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = self.adjoint_plane(&av, hr_dims);
        }
        Ok(estimate)
    }

    /// Samples `A x + e` with `e ~ N(0, noise_sigma^2)`.
    pub fn degrade(&self, x: &MultispectralImage, seed: u64) -> Result<MultispectralImage> {
        add_noise(&self.apply(x)?, self.noise_sigma, seed)
    }
}
