//! Forward-backward plug-and-play:
//! `x_{k+1} = D(x_k - tau A^T (A x_k - z); tau * lambda)`.
//!
//! With a proximal denoiser this is classical forward-backward splitting on
//! `1/2 |Ax - z|^2 + lambda g(x)`.

use std::fmt;
use std::io;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::analysis::{bicubic_upsample, psnr, ssim};
use crate::denoisers::{DenoiserKind, DenoiserSpec};
use crate::forward::ForwardModel;
use crate::raster::MultispectralImage;
use crate::{Error, Result};

/// Relative residual above which a run is declared divergent.
pub const DIVERGENCE_CAP: f64 = 1e3;
/// Power iterations used to bound the step size in [`fb_classic`].
pub const NORM_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum Init {
    /// `x0 = A^T z`
    Adjoint,
    /// `x0 = bicubic_upsample(z, s)`
    #[default]
    Bicubic,
    Zeros,
}

impl Init {
    pub fn label(self) -> &'static str {
        match self {
            Init::Adjoint => "adjoint",
            Init::Bicubic => "bicubic",
            Init::Zeros => "zeros",
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjoint" => Ok(Init::Adjoint),
            "bicubic" => Ok(Init::Bicubic),
            "zeros" => Ok(Init::Zeros),
            other => Err(Error::param(format!("unknown initialization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub tau: f64,
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once `|x_{k+1} - x_k| / |x_k|` drops below this.
    pub tol: f64,
    pub init: Init,
    pub divergence_cap: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig::standard()
    }
}

impl SolveConfig {
    /// `tau = 3`, `lambda = 0.08`, bicubic start, at most 200 iterations.
    pub fn standard() -> Self {
        SolveConfig { tau: 3.0, lambda: 0.08, max_iters: 200, tol: 1e-5, init: Init::Bicubic, divergence_cap: DIVERGENCE_CAP }
    }

    /// [`Self::standard`] with a ten times weaker prior, `lambda = 0.008`.
    pub fn light_prior() -> Self {
        SolveConfig { lambda: 0.008, ..SolveConfig::standard() }
    }

    pub fn with_step(&self, tau: f64, lambda: f64) -> Self {
        SolveConfig { tau, lambda, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::param(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param(format!("tol must be >= 0, got {}", self.tol)));
        }
        if !(self.divergence_cap > 0.0) {
            return Err(Error::param(format!("divergence cap must be > 0, got {}", self.divergence_cap)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Last finite iterate.
    pub final_iterate: MultispectralImage,
    pub iterations_run: usize,
    /// `|x_{k+1} - x_k| / |x_k|`, falling back to `|x_{k+1}|` when `x_k = 0`.
    pub residual_trace: Vec<f64>,
    /// `1/2 |A x_{k+1} - z|^2`.
    pub data_fidelity_trace: Vec<f64>,
    /// PSNR of the clipped iterate against the reference, when one was given.
    pub psnr_trace: Option<Vec<f64>>,
    /// Composite objective, [`fb_classic`] only.
    pub objective_trace: Option<Vec<f64>>,
    pub converged: bool,
    pub diverged: bool,
}

impl SolveReport {
    pub fn final_residual(&self) -> Option<f64> {
        self.residual_trace.last().copied()
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.psnr_trace.as_ref().and_then(|t| t.last().copied())
    }

    /// CSV columns `iter, residual, data_fidelity, psnr`; iterations count
    /// from 1 and `psnr` is empty without a reference.
    pub fn write_trace_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for k in 0..self.iterations_run {
            let p = self.psnr_trace.as_ref().map(|t| t[k].to_string()).unwrap_or_default();
            w.write_record([
                (k + 1).to_string(),
                self.residual_trace[k].to_string(),
                self.data_fidelity_trace[k].to_string(),
                p,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const TRACE_HEADER: [&str; 4] = ["iter", "residual", "data_fidelity", "psnr"];
pub const SWEEP_HEADER: [&str; 6] = ["tau", "lambda", "iterations", "final_psnr", "final_ssim", "diverged"];

/// HR grid of a model for an LR observation.
fn hr_dims(z: &MultispectralImage, m: &ForwardModel) -> (usize, usize) {
    (z.height() * m.scale(), z.width() * m.scale())
}

pub fn initial_iterate(z: &MultispectralImage, m: &ForwardModel, init: Init) -> Result<MultispectralImage> {
    let dims = hr_dims(z, m);
    match init {
        Init::Adjoint => m.adjoint_to(z, dims),
        Init::Bicubic => bicubic_upsample(z, m.scale()),
        Init::Zeros => Ok(m.adjoint_to(z, dims)?.scaled(0.0)),
    }
}

/// Shared iteration. `objective` adds `lambda g(x)` to the fidelity when set.
fn iterate(
    z: &MultispectralImage,
    m: &ForwardModel,
    d: &DenoiserSpec,
    cfg: &SolveConfig,
    reference: Option<&MultispectralImage>,
    penalty: Option<&dyn Fn(&MultispectralImage) -> f64>,
) -> Result<SolveReport> {
    cfg.validate()?;
    let dims = hr_dims(z, m);
    m.lr_dims(dims)?;
    if let Some(r) = reference {
        if r.dims() != dims || r.band_names() != z.band_names() {
            return Err(Error::dims(format!(
                "reference {:?} {:?} does not match the HR grid {:?} {:?}",
                r.dims(),
                r.band_names(),
                dims,
                z.band_names()
            )));
        }
    }
    let strength = cfg.tau * cfg.lambda;
    let mut x = initial_iterate(z, m, cfg.init)?;
    let mut ax = m.apply(&x)?;

    let mut residual_trace = Vec::new();
    let mut fidelity_trace = Vec::new();
    let mut psnr_trace = reference.map(|_| Vec::new());
    let mut objective_trace = penalty.map(|_| Vec::new());
    let mut converged = false;
    let mut diverged = false;

    for k in 0..cfg.max_iters {
        let resid = ax.add_scaled(-1.0, z)?;
        let grad = m.adjoint_to(&resid, dims)?;
        let y = x.add_scaled(-cfg.tau, &grad)?;
        let next = d
            .denoise(&y, strength)
            .map_err(|e| Error::Denoiser { iteration: k + 1, source: Box::new(e) })?;
        if next.dims() != dims || next.band_names() != x.band_names() {
            return Err(Error::Denoiser {
                iteration: k + 1,
                source: Box::new(Error::dims(format!("denoiser returned {:?}", next.dims()))),
            });
        }

        let step = next.distance_sq(&x)?.sqrt();
        let base = match x.norm() {
            n if n > 0.0 => n,
            _ => next.norm(),
        };
        let residual = if step == 0.0 { 0.0 } else { step / base };
        let a_next = m.apply(&next)?;
        let fidelity = 0.5 * a_next.distance_sq(z)?;

        residual_trace.push(residual);
        fidelity_trace.push(fidelity);
        if let (Some(t), Some(r)) = (psnr_trace.as_mut(), reference) {
            t.push(psnr(&next.clamped(0.0, 1.0), r, 1.0)?);
        }
        if let (Some(t), Some(g)) = (objective_trace.as_mut(), penalty) {
            t.push(fidelity + cfg.lambda * g(&next));
        }

        let finite = residual.is_finite() && fidelity.is_finite() && next.is_finite();
        if !finite || residual > cfg.divergence_cap {
            diverged = true;
            if next.is_finite() {
                x = next;
            }
            break;
        }
        x = next;
        ax = a_next;
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        final_iterate: x,
        iterations_run: residual_trace.len(),
        residual_trace,
        data_fidelity_trace: fidelity_trace,
        psnr_trace,
        objective_trace,
        converged,
        diverged,
    })
}

/// Runs FB-PnP on the LR observation `z`. A `reference` on the HR grid turns
/// on the PSNR trace.
pub fn fb_pnp(
    z: &MultispectralImage,
    m: &ForwardModel,
    d: &DenoiserSpec,
    cfg: &SolveConfig,
    reference: Option<&MultispectralImage>,
) -> Result<SolveReport> {
    iterate(z, m, d, cfg, reference, None)
}

/// Classical forward-backward with the wavelet or TV prox.
///
/// `tau` is checked against `L = |A|^2`: above `1/L` logs a warning (monotone
/// descent is no longer guaranteed), above `2/L` is an error.
pub fn fb_classic(
    z: &MultispectralImage,
    m: &ForwardModel,
    prox: DenoiserKind,
    cfg: &SolveConfig,
    reference: Option<&MultispectralImage>,
) -> Result<SolveReport> {
    let d = match prox {
        DenoiserKind::WaveletSoft | DenoiserKind::TvProx => DenoiserSpec::classical(prox)?,
        other => return Err(Error::param(format!("`{other}` is not a proximal operator"))),
    };
    fb_classic_with(z, m, &d, cfg, reference)
}

/// [`fb_classic`] with an explicitly configured prox (e.g. more TV iterations).
pub fn fb_classic_with(
    z: &MultispectralImage,
    m: &ForwardModel,
    d: &DenoiserSpec,
    cfg: &SolveConfig,
    reference: Option<&MultispectralImage>,
) -> Result<SolveReport> {
    cfg.validate()?;
    let lipschitz = m.operator_norm(hr_dims(z, m), NORM_ITERS)?.powi(2);
    check_step(cfg.tau, lipschitz)?;
    let g = |x: &MultispectralImage| d.penalty(x).expect("classical denoisers have a penalty");
    if d.penalty(z).is_none() {
        return Err(Error::param(format!("`{}` has no explicit penalty", d.kind())));
    }
    iterate(z, m, d, cfg, reference, Some(&g))
}

/// Step-size bound for `L = |A|^2`.
pub fn check_step(tau: f64, lipschitz: f64) -> Result<()> {
    if lipschitz <= 0.0 {
        return Ok(());
    }
    let bound = 2.0 / lipschitz;
    if tau > bound {
        return Err(Error::StepSize { tau, bound });
    }
    if tau > 1.0 / lipschitz {
        warn!("tau = {tau} exceeds 1/|A|^2 = {}; the objective may not decrease monotonically", 1.0 / lipschitz);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub tau: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub final_psnr: f64,
    pub final_ssim: f64,
    pub converged: bool,
    pub diverged: bool,
    pub residual_trace: Vec<f64>,
    pub data_fidelity_trace: Vec<f64>,
    pub psnr_trace: Vec<f64>,
    /// Set when the solve itself failed; the cell then counts as diverged.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Row-major over `taus` x `lambdas`.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    /// Highest final PSNR among cells that did not diverge. Ties go to the
    /// earliest cell in grid order.
    pub fn best(&self) -> Option<&SweepCell> {
        self.cells
            .iter()
            .filter(|c| !c.diverged && c.final_psnr.is_finite())
            .fold(None, |best: Option<&SweepCell>, c| match best {
                Some(b) if b.final_psnr >= c.final_psnr => Some(b),
                _ => Some(c),
            })
    }

    pub fn all_diverged(&self) -> bool {
        self.cells.iter().all(|c| c.diverged)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_HEADER)?;
        for c in &self.cells {
            w.write_record([
                c.tau.to_string(),
                c.lambda.to_string(),
                c.iterations.to_string(),
                c.final_psnr.to_string(),
                c.final_ssim.to_string(),
                c.diverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-iteration traces of every cell with the given `lambda`, one row
    /// per `(tau, iter)`.
    pub fn write_traces_csv<W: io::Write>(&self, lambda: f64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "lambda", "iter", "residual", "data_fidelity", "psnr"])?;
        for c in self.cells.iter().filter(|c| c.lambda == lambda) {
            for k in 0..c.iterations {
                w.write_record([
                    c.tau.to_string(),
                    c.lambda.to_string(),
                    (k + 1).to_string(),
                    c.residual_trace[k].to_string(),
                    c.data_fidelity_trace[k].to_string(),
                    c.psnr_trace[k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates every `(tau, lambda)` pair independently, in parallel.
pub fn sweep(
    z: &MultispectralImage,
    m: &ForwardModel,
    d: &DenoiserSpec,
    taus: &[f64],
    lambdas: &[f64],
    base: &SolveConfig,
    reference: &MultispectralImage,
) -> Result<SweepResult> {
    if taus.is_empty() || lambdas.is_empty() {
        return Err(Error::param("sweep grids must be non-empty"));
    }
    let grid: Vec<(f64, f64)> = taus.iter().flat_map(|t| lambdas.iter().map(move |l| (*t, *l))).collect();
    for (t, l) in &grid {
        base.with_step(*t, *l).validate()?;
    }
    let cells = grid
        .par_iter()
        .map(|&(tau, lambda)| {
            let cfg = base.with_step(tau, lambda);
            let d = d.clone();
            match fb_pnp(z, m, &d, &cfg, Some(reference)) {
                Ok(r) => {
                    let clipped = r.final_iterate.clamped(0.0, 1.0);
                    let final_ssim = ssim(&clipped, reference).unwrap_or(f64::NAN);
                    SweepCell {
                        tau,
                        lambda,
                        iterations: r.iterations_run,
                        final_psnr: r.final_psnr().unwrap_or(f64::NAN),
                        final_ssim,
                        converged: r.converged,
                        diverged: r.diverged,
                        residual_trace: r.residual_trace,
                        data_fidelity_trace: r.data_fidelity_trace,
                        psnr_trace: r.psnr_trace.unwrap_or_default(),
                        error: None,
                    }
                }
                Err(e) => SweepCell {
                    tau,
                    lambda,
                    iterations: 0,
                    final_psnr: f64::NAN,
                    final_ssim: f64::NAN,
                    converged: false,
                    diverged: true,
                    residual_trace: Vec::new(),
                    data_fidelity_trace: Vec::new(),
                    psnr_trace: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepResult { cells })
}
