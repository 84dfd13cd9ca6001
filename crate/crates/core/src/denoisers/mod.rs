//! Plug-in denoisers `D(x; strength)` for the FB-PnP iteration.
//!
//! Strength mapping:
//! - `identity`: ignored.
//! - `wavelet_soft`: soft-threshold level on orthonormal Haar details.
//! - `tv_prox`: weight `lambda` of `prox_{lambda TV}`.
//! - `external`: value written into the constant noise-map channel.
//!
//! Classical kinds act band by band; the external network sees all bands.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
#[cfg(feature = "onnx")]
use std::sync::Arc;

use crate::raster::MultispectralImage;
use crate::{Error, Result};

#[cfg(feature = "onnx")]
mod external;
mod tv;
mod wavelet;

#[cfg(feature = "onnx")]
pub use external::{ExternalDenoiser, ExternalMetadata, DIVISIBILITY_KEY, BANDS_KEY, NOISE_MAP_KEY};
pub use tv::{gradient, divergence, total_variation, tv_objective, tv_prox, tv_prox_plane, tv_prox_plane_traced};
pub use wavelet::{wavelet_l1, wavelet_soft_threshold, wavelet_soft_threshold_levels, soft_threshold};

/// Haar decomposition depth used by the `wavelet_soft` denoiser.
pub const WAVELET_LEVELS: usize = 2;
/// Inner dual iterations per `tv_prox` call unless configured otherwise.
pub const DEFAULT_TV_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DenoiserKind {
    Identity,
    WaveletSoft,
    TvProx,
    External,
}

impl DenoiserKind {
    pub fn label(self) -> &'static str {
        match self {
            DenoiserKind::Identity => "identity",
            DenoiserKind::WaveletSoft => "wavelet_soft",
            DenoiserKind::TvProx => "tv_prox",
            DenoiserKind::External => "external",
        }
    }
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(DenoiserKind::Identity),
            "wavelet_soft" => Ok(DenoiserKind::WaveletSoft),
            "tv_prox" => Ok(DenoiserKind::TvProx),
            "external" => Ok(DenoiserKind::External),
            other => Err(Error::param(format!("unknown denoiser kind `{other}`"))),
        }
    }
}

/// A configured denoiser.
#[derive(Debug, Clone)]
pub enum DenoiserSpec {
    Identity,
    WaveletSoft { levels: usize },
    TvProx { iters: usize },
    #[cfg(feature = "onnx")]
    External(Arc<ExternalDenoiser>),
}

impl DenoiserSpec {
    pub fn wavelet_soft() -> Self {
        DenoiserSpec::WaveletSoft { levels: WAVELET_LEVELS }
    }

    pub fn tv_prox() -> Self {
        DenoiserSpec::TvProx { iters: DEFAULT_TV_ITERS }
    }

    /// Classical kinds only; external denoisers come from [`load_external`].
    pub fn classical(kind: DenoiserKind) -> Result<Self> {
        match kind {
            DenoiserKind::Identity => Ok(DenoiserSpec::Identity),
            DenoiserKind::WaveletSoft => Ok(Self::wavelet_soft()),
            DenoiserKind::TvProx => Ok(Self::tv_prox()),
            DenoiserKind::External => Err(Error::param("external denoisers need a model file")),
        }
    }

    pub fn kind(&self) -> DenoiserKind {
        match self {
            DenoiserSpec::Identity => DenoiserKind::Identity,
            DenoiserSpec::WaveletSoft { .. } => DenoiserKind::WaveletSoft,
            DenoiserSpec::TvProx { .. } => DenoiserKind::TvProx,
            #[cfg(feature = "onnx")]
            DenoiserSpec::External(_) => DenoiserKind::External,
        }
    }

    pub fn strength_semantics(&self) -> &'static str {
        match self.kind() {
            DenoiserKind::Identity => "ignored",
            DenoiserKind::WaveletSoft => "soft threshold applied to Haar detail coefficients",
            DenoiserKind::TvProx => "lambda of prox_{lambda TV}",
            DenoiserKind::External => "constant value of the appended noise-map channel",
        }
    }

    pub fn resource(&self) -> Option<&Path> {
        match self {
            #[cfg(feature = "onnx")]
            DenoiserSpec::External(d) => Some(d.path()),
            _ => None,
        }
    }

    /// `D(x; strength)`. Same grid and bands as `x`; `strength = 0` returns
    /// `x` unchanged for every classical kind.
    pub fn denoise(&self, x: &MultispectralImage, strength: f64) -> Result<MultispectralImage> {
        if !(strength.is_finite() && strength >= 0.0) {
            return Err(Error::param(format!("denoiser strength must be >= 0, got {strength}")));
        }
        match self {
            DenoiserSpec::Identity => Ok(x.clone()),
            DenoiserSpec::WaveletSoft { levels } => Ok(wavelet_soft_threshold_levels(x, strength, *levels)),
            DenoiserSpec::TvProx { iters } => Ok(tv_prox(x, strength, *iters)),
            #[cfg(feature = "onnx")]
            DenoiserSpec::External(d) => d.denoise(x, strength),
        }
    }

    /// The penalty `g` whose prox this denoiser computes (`g = 0` for the
    /// identity). External networks have no explicit penalty and return `None`.
    pub fn penalty(&self, x: &MultispectralImage) -> Option<f64> {
        match self {
            DenoiserSpec::Identity => Some(0.0),
            DenoiserSpec::WaveletSoft { levels } => Some(wavelet_l1(x, *levels)),
            DenoiserSpec::TvProx { .. } => Some(x.bands().iter().map(|b| total_variation(b.values())).sum()),
            #[cfg(feature = "onnx")]
            DenoiserSpec::External(_) => None,
        }
    }
}

/// Loads an external denoiser network after checking its input signature.
#[cfg(feature = "onnx")]
pub fn load_external(path: impl AsRef<Path>) -> Result<DenoiserSpec> {
    Ok(DenoiserSpec::External(Arc::new(ExternalDenoiser::load(path)?)))
}

#[cfg(not(feature = "onnx"))]
pub fn load_external(path: impl AsRef<Path>) -> Result<DenoiserSpec> {
    Err(Error::Resource {
        path: path.as_ref().to_path_buf(),
        reason: "built without the `onnx` feature".into(),
    })
}

/// Convenience wrapper: `spec.denoise(x, strength)`.
pub fn denoise(spec: &DenoiserSpec, x: &MultispectralImage, strength: f64) -> Result<MultispectralImage> {
    spec.denoise(x, strength)
}
