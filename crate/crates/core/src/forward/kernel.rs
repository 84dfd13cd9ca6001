use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::{Error, Result};

/// Tolerance on `sum(taps) == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Square, non-negative blur kernel with unit mass.
///
/// Tap `(a, b)` sits at offset `(a - c, b - c)` from the output pixel, with
/// anchor `c = (k - 1) / 2` (integer division). For even `k` the anchor is the
/// top-left tap of the central 2x2 block, while the sampled Gaussian itself is
/// centred at `(k - 1) / 2` in continuous tap coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    taps: Array2<f64>,
    sigma: f64,
}

impl Kernel {
    /// Isotropic Gaussian sampled on a `size x size` grid and normalised.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if size == 0 {
            return Err(Error::param("kernel size must be >= 1"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param(format!("kernel sigma must be > 0, got {sigma}")));
        }
        let center = (size as f64 - 1.0) / 2.0;
        let d2 = |a: usize, b: usize| {
            let (da, db) = (a as f64 - center, b as f64 - center);
            da * da + db * db
        };
        // shift exponents so the largest tap is exp(0); avoids underflow to an
        // all-zero grid for very narrow kernels
        let d2_min = if size % 2 == 1 { 0.0 } else { 0.5 };
        let raw = Array2::from_shape_fn((size, size), |(a, b)| {
            (-(d2(a, b) - d2_min) / (2.0 * sigma * sigma)).exp()
        });
        let total = crate::sum::compensated(raw.iter().copied());
        Ok(Kernel { taps: raw / total, sigma })
    }

    pub fn identity() -> Self {
        Kernel { taps: Array2::ones((1, 1)), sigma: 0.0 }
    }

    /// Arbitrary taps; must be square, finite, non-negative and sum to one.
    /// `sigma` is informational (0 when the kernel is not a Gaussian).
    pub fn from_taps(taps: Array2<f64>, sigma: f64) -> Result<Self> {
        let (h, w) = taps.dim();
        if h == 0 || h != w {
            return Err(Error::validation(format!("kernel must be square and non-empty, got {h}x{w}")));
        }
        if taps.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::validation("kernel taps must be finite and non-negative"));
        }
        let total = crate::sum::compensated(taps.iter().copied());
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::validation(format!("kernel taps sum to {total}, expected 1")));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::validation(format!("kernel sigma must be >= 0, got {sigma}")));
        }
        Ok(Kernel { taps, sigma })
    }

    pub fn size(&self) -> usize {
        self.taps.nrows()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn taps(&self) -> &Array2<f64> {
        &self.taps
    }

    pub fn anchor(&self) -> usize {
        (self.size() - 1) / 2
    }

    /// Plain-text form: a `k sigma` header line, then `k` rows of taps.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {}", self.size(), self.sigma).unwrap();
        for row in self.taps.rows() {
            let line: Vec<String> = row.iter().map(|t| format!("{t:e}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut next = |what: &str| {
            tokens.next().ok_or_else(|| Error::format(format!("kernel file ended before {what}")))
        };
        let size: usize = next("size")?
            .parse()
            .map_err(|_| Error::format("kernel size is not an integer"))?;
        let sigma: f64 = next("sigma")?
            .parse()
            .map_err(|_| Error::format("kernel sigma is not a number"))?;
        if size == 0 {
            return Err(Error::format("kernel size must be >= 1"));
        }
        let mut taps = Vec::with_capacity(size * size);
        for i in 0..size * size {
            let t: f64 = next(&format!("tap {i}"))?
                .parse()
                .map_err(|_| Error::format(format!("tap {i} is not a number")))?;
            taps.push(t);
        }
        if tokens.next().is_some() {
            return Err(Error::format(format!("trailing data after {size}x{size} taps")));
        }
        Kernel::from_taps(Array2::from_shape_vec((size, size), taps).unwrap(), sigma)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Kernel::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::raster::io::write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}
