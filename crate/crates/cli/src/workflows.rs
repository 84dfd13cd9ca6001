//! End-to-end runs behind the `superres` and `sweep` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use landsr_core::analysis::{bicubic_upsample, water_area, water_mask, write_metrics_csv, MetricsRow};
use landsr_core::raster::io::write_atomic;
use landsr_core::raster::{load_image, preview, save_image};
use landsr_core::solver::{fb_pnp, sweep, SolveReport, SweepCell, SweepResult};
use landsr_core::{Error, ForwardModel, MultispectralImage, Result};
use log::info;

use crate::config::ExperimentConfig;

/// Inputs resolved from a config, checked before anything is written.
pub struct Prepared {
    pub image_id: String,
    pub model: ForwardModel,
    pub lr: MultispectralImage,
    pub hr: Option<MultispectralImage>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    cfg.check_paths()?;
    let lr_path = cfg.io.lr.as_ref().ok_or_else(|| Error::Validation("config needs io.lr".into()))?;
    let model = cfg.forward.build()?;
    let lr = load_image(lr_path)?;
    let hr = cfg.io.hr.as_ref().map(load_image).transpose()?;
    if let Some(hr) = &hr {
        if model.lr_dims(hr.dims())? != lr.dims() || hr.band_names() != lr.band_names() {
            return Err(Error::Dimension(format!(
                "HR {:?} does not match LR {:?} at scale {}",
                hr.dims(),
                lr.dims(),
                model.scale()
            )));
        }
    }
    let image_id = lr_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    Ok(Prepared { image_id, model, lr, hr })
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

/// Metrics of `x` (clipped to `[0, 1]`) against an optional HR reference.
/// Without a reference, PSNR, SSIM and the reference area are NaN.
pub fn metrics_row(
    image_id: &str,
    method: &str,
    x: &MultispectralImage,
    reference: Option<&MultispectralImage>,
    water_threshold: f64,
) -> Result<MetricsRow> {
    let clipped = x.clamped(0.0, 1.0);
    match reference {
        Some(r) => MetricsRow::evaluate(image_id, method, &clipped, r, water_threshold),
        None => Ok(MetricsRow {
            image_id: image_id.into(),
            method: method.into(),
            psnr_db: f64::NAN,
            ssim: f64::NAN,
            water_area_m2: water_area(&water_mask(&clipped, water_threshold)?),
            reference_water_area_m2: f64::NAN,
        }),
    }
}

#[derive(Debug)]
pub struct ReconstructOutcome {
    pub image_id: String,
    pub report: SolveReport,
    pub rows: Vec<MetricsRow>,
    pub written: Vec<PathBuf>,
}

/// FB-PnP reconstruction plus the bicubic comparator. Writes
/// `<id>_pnp.msr`, `<id>_bicubic.msr`, `<id>_trace.csv`, `<id>_metrics.csv`
/// and, when enabled, PNG previews into `io.out_dir`.
pub fn run_reconstruct(cfg: &ExperimentConfig) -> Result<ReconstructOutcome> {
    let p = prepare(cfg)?;
    let denoiser = cfg.denoiser.build()?;
    let solve = cfg.solver.build()?;
    let report = fb_pnp(&p.lr, &p.model, &denoiser, &solve, p.hr.as_ref())?;
    let bicubic = bicubic_upsample(&p.lr, p.model.scale())?;
    info!(
        "{}: {} iterations, converged={}, diverged={}",
        p.image_id, report.iterations_run, report.converged, report.diverged
    );

    let thr = cfg.io.water_threshold;
    let rows = vec![
        metrics_row(&p.image_id, "pnp", &report.final_iterate, p.hr.as_ref(), thr)?,
        metrics_row(&p.image_id, "bicubic", &bicubic, p.hr.as_ref(), thr)?,
    ];

    let out = &cfg.io.out_dir;
    fs::create_dir_all(out)?;
    let id = &p.image_id;
    let mut written = vec![
        out.join(format!("{id}_pnp.msr")),
        out.join(format!("{id}_bicubic.msr")),
        out.join(format!("{id}_trace.csv")),
        out.join(format!("{id}_metrics.csv")),
    ];
    save_image(&report.final_iterate, &written[0])?;
    save_image(&bicubic, &written[1])?;
    write_csv_file(&written[2], |b| report.write_trace_csv(b))?;
    write_csv_file(&written[3], |b| write_metrics_csv(&rows, b))?;
    if cfg.io.png_preview {
        let pnp = report.final_iterate.clamped(0.0, 1.0);
        for (name, img) in [("pnp", &pnp), ("bicubic", &bicubic)] {
            let rgb = out.join(format!("{id}_{name}_rgb.png"));
            let mask = out.join(format!("{id}_{name}_mask.png"));
            preview::rgb_png(img, &rgb)?;
            preview::mask_png(&water_mask(img, thr)?.mask, &mask)?;
            written.extend([rgb, mask]);
        }
    }
    Ok(ReconstructOutcome { image_id: p.image_id, report, rows, written })
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub result: SweepResult,
    pub best: Option<SweepCell>,
    pub written: Vec<PathBuf>,
}

/// Grid sweep over `taus` x `lambdas` against the HR reference. Writes
/// `sweep.csv`, `sweep_traces.csv` (every tau at the best lambda) and
/// `sweep_best.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, taus: &[f64], lambdas: &[f64]) -> Result<SweepOutcome> {
    let p = prepare(cfg)?;
    let hr = p.hr.as_ref().ok_or_else(|| Error::Validation("a sweep needs io.hr as the PSNR reference".into()))?;
    let denoiser = cfg.denoiser.build()?;
    let base = cfg.solver.build()?;
    let result = sweep(&p.lr, &p.model, &denoiser, taus, lambdas, &base, hr)?;
    let best = result.best().cloned();

    let out = &cfg.io.out_dir;
    fs::create_dir_all(out)?;
    let written = vec![out.join("sweep.csv"), out.join("sweep_traces.csv"), out.join("sweep_best.csv")];
    write_csv_file(&written[0], |b| result.write_csv(b))?;
    let trace_lambda = best.as_ref().map(|c| c.lambda).unwrap_or(lambdas[0]);
    write_csv_file(&written[1], |b| result.write_traces_csv(trace_lambda, b))?;
    write_csv_file(&written[2], |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["tau", "lambda", "iterations", "final_psnr", "final_ssim"])?;
        if let Some(c) = &best {
            w.write_record([
                c.tau.to_string(),
                c.lambda.to_string(),
                c.iterations.to_string(),
                c.final_psnr.to_string(),
                c.final_ssim.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(SweepOutcome { result, best, written })
}
