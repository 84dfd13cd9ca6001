//! Experiment configuration, read from a single TOML document.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//!
//! [forward]
//! kernel_size = 4
//! kernel_sigma = 0.8      # or kernel_file = "kernel.txt"
//! scale = 3
//! noise_sigma = 0.09
//! boundary = "reflective"
//!
//! [denoiser]
//! kind = "tv_prox"        # identity | wavelet_soft | tv_prox | external
//! tv_iters = 50
//! model = "denoiser.onnx" # external only
//!
//! [solver]
//! tau = 3.0
//! lambda = 0.08
//! max_iters = 200
//! tol = 1e-5
//! init = "bicubic"
//!
//! [io]
//! lr = "scene_lr.msr"
//! hr = "scene_hr.msr"     # optional reference
//! out_dir = "out"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use landsr_core::denoisers::{self, DenoiserKind, DenoiserSpec};
use landsr_core::solver::{Init, SolveConfig, DIVERGENCE_CAP};
use landsr_core::{Boundary, Error, ForwardModel, Kernel, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub forward: ForwardSection,
    #[serde(default)]
    pub denoiser: DenoiserSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardSection {
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    /// Overrides `kernel_size`/`kernel_sigma` when set.
    pub kernel_file: Option<PathBuf>,
    pub scale: usize,
    pub noise_sigma: f64,
    pub boundary: String,
}

impl Default for ForwardSection {
    fn default() -> Self {
        ForwardSection {
            kernel_size: 4,
            kernel_sigma: 0.09,
            kernel_file: None,
            scale: 3,
            noise_sigma: 0.09,
            boundary: Boundary::Reflective.label().into(),
        }
    }
}

impl ForwardSection {
    pub fn build(&self) -> Result<ForwardModel> {
        let kernel = match &self.kernel_file {
            Some(p) => Kernel::load(p)?,
            None => Kernel::gaussian(self.kernel_size, self.kernel_sigma)?,
        };
        ForwardModel::new(kernel, self.scale, self.noise_sigma, self.boundary.parse()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    pub kind: String,
    pub tv_iters: usize,
    pub wavelet_levels: usize,
    pub model: Option<PathBuf>,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        DenoiserSection {
            kind: DenoiserKind::TvProx.label().into(),
            tv_iters: denoisers::DEFAULT_TV_ITERS,
            wavelet_levels: denoisers::WAVELET_LEVELS,
            model: None,
        }
    }
}

impl DenoiserSection {
    pub fn build(&self) -> Result<DenoiserSpec> {
        match self.kind.parse::<DenoiserKind>()? {
            DenoiserKind::Identity => Ok(DenoiserSpec::Identity),
            DenoiserKind::WaveletSoft => {
                if self.wavelet_levels == 0 {
                    return Err(Error::InvalidParameter("wavelet_levels must be >= 1".into()));
                }
                Ok(DenoiserSpec::WaveletSoft { levels: self.wavelet_levels })
            }
            DenoiserKind::TvProx => {
                if self.tv_iters == 0 {
                    return Err(Error::InvalidParameter("tv_iters must be >= 1".into()));
                }
                Ok(DenoiserSpec::TvProx { iters: self.tv_iters })
            }
            DenoiserKind::External => match &self.model {
                Some(p) => denoisers::load_external(p),
                None => Err(Error::InvalidParameter("the external denoiser needs `model`".into())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tau: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub init: String,
    pub divergence_cap: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveConfig::default();
        SolverSection {
            tau: d.tau,
            lambda: d.lambda,
            max_iters: d.max_iters,
            tol: d.tol,
            init: d.init.label().into(),
            divergence_cap: DIVERGENCE_CAP,
        }
    }
}

impl SolverSection {
    pub fn build(&self) -> Result<SolveConfig> {
        let cfg = SolveConfig {
            tau: self.tau,
            lambda: self.lambda,
            max_iters: self.max_iters,
            tol: self.tol,
            init: self.init.parse::<Init>()?,
            divergence_cap: self.divergence_cap,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub lr: Option<PathBuf>,
    pub hr: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub png_preview: bool,
    pub water_threshold: f64,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection { lr: None, hr: None, out_dir: PathBuf::from("out"), png_preview: false, water_threshold: 0.0 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            forward: ForwardSection::default(),
            denoiser: DenoiserSection::default(),
            solver: SolverSection::default(),
            io: IoSection::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Validation(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.forward.kernel_file);
        rebase(base, &mut cfg.denoiser.model);
        rebase(base, &mut cfg.io.lr);
        rebase(base, &mut cfg.io.hr);
        if cfg.io.out_dir.is_relative() {
            cfg.io.out_dir = base.join(&cfg.io.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    /// Schema and value checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.forward.boundary.parse::<Boundary>()?;
        if self.forward.kernel_file.is_none() {
            Kernel::gaussian(self.forward.kernel_size, self.forward.kernel_sigma)?;
        }
        if self.forward.scale == 0 {
            return Err(Error::InvalidParameter("scale must be >= 1".into()));
        }
        self.denoiser.kind.parse::<DenoiserKind>()?;
        self.solver.build()?;
        if !self.io.water_threshold.is_finite() {
            return Err(Error::InvalidParameter("water_threshold must be finite".into()));
        }
        Ok(())
    }

    /// Every referenced input must exist before a run writes anything.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = [&self.forward.kernel_file, &self.denoiser.model, &self.io.lr, &self.io.hr];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Resource { path: p.clone(), reason: "file not found".into() });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn minimal_document() {
        let cfg = ExperimentConfig::from_toml("schema_version = 1\n[solver]\ntau = 2.0\n").unwrap();
        assert_eq!(cfg.solver.tau, 2.0);
        assert_eq!(cfg.forward.scale, 3);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(ExperimentConfig::from_toml("seed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 2\n").is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 1\nunknown = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 1\n[solver]\ntau = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 1\n[denoiser]\nkind = \"bm3d\"\n").is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 1\n[forward]\nboundary = \"wrap\"\n").is_err());
    }
}
