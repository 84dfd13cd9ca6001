//! Multispectral single-image super-resolution with forward-backward
//! plug-and-play (FB-PnP) iterations.
//!
//! The crate is organised around the degradation operator
//! `z = A x + e`, where `A` blurs each band with a small Gaussian kernel and
//! decimates by an integer factor:
//!
//! - [`raster`]: the four-band image model and the MSR file format.
//! - [`forward`]: blur, decimation, the exact adjoint, noise and `|A|`.
//! - [`calibration`]: MAD noise estimation, kernel-width grid search and
//!   temporal pairing of HR/LR acquisitions.
//! - [`denoisers`]: the plug-in denoisers (identity, Haar soft threshold,
//!   TV prox and, with the `onnx` feature, an external network).
//! - [`solver`]: the FB-PnP iteration, its classical proximal variant and
//!   parameter sweeps.
//! - [`analysis`]: NDWI water masks, PSNR, SSIM and the bicubic baseline.

pub mod analysis;
pub mod calibration;
pub mod denoisers;
mod error;
pub mod forward;
pub mod raster;
pub mod solver;
pub(crate) mod sum;
pub mod wavelet;

pub use error::{Error, Result};
pub use forward::{Boundary, ForwardModel, Kernel};
pub use raster::{BandName, BandPlane, CropWindow, MultispectralImage};
