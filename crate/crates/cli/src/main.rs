use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landsr_cli::config::ExperimentConfig;
use landsr_cli::synthetic::{make_synthetic, write_scenes, SyntheticManifest};
use landsr_cli::workflows::{metrics_row, run_reconstruct, run_sweep};
use landsr_cli::{exit_code, EXIT_DIVERGED, EXIT_OK};
use landsr_core::analysis::{bicubic_upsample, ndwi, nearest_upsample, threshold_water, write_metrics_csv};
use landsr_core::calibration::{
    calibrate_kernel, estimate_image_noise, pair_by_time, read_manifest, PairedSample,
};
use landsr_core::raster::io::write_atomic;
use landsr_core::raster::{load_image, preview, save_image};
use landsr_core::{Error, Result};
use log::{error, info, warn};

#[derive(Parser)]
#[command(name = "landsr", version, about = "Multispectral super-resolution with forward-backward plug-and-play")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Also write 8-bit PNG previews.
    #[arg(long, global = true)]
    png_preview: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ForwardArgs {
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    kernel_sigma: Option<f64>,
    /// Kernel in the plain-text exchange format (overrides size/sigma).
    #[arg(long)]
    kernel_file: Option<PathBuf>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// `reflective` or `zero`.
    #[arg(long)]
    boundary: Option<String>,
}

#[derive(Args, Default)]
struct SolverArgs {
    /// `identity`, `wavelet_soft`, `tv_prox` or `external`.
    #[arg(long)]
    denoiser: Option<String>,
    /// ONNX file for the external denoiser.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tv_iters: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// `adjoint`, `bicubic` or `zeros`.
    #[arg(long)]
    init: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural HR river scenes.
    SynthScenes {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 300)]
        height: usize,
        #[arg(long, default_value_t = 300)]
        width: usize,
    },
    /// Blur, decimate and add noise to every HR image in a directory.
    Degrade {
        #[arg(long)]
        hr_dir: PathBuf,
        #[command(flatten)]
        forward: ForwardArgs,
    },
    /// Grid-search the Gaussian kernel width on HR/LR pairs.
    CalibrateKernel {
        /// A `degrade` manifest (id, hr_path, lr_path, noise_seed).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// HR image; pair with `--lr` (repeatable).
        #[arg(long)]
        hr: Vec<PathBuf>,
        #[arg(long)]
        lr: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        sigma_min: f64,
        #[arg(long, default_value_t = 2.0)]
        sigma_max: f64,
        #[arg(long, default_value_t = 0.05)]
        sigma_step: f64,
        #[command(flatten)]
        forward: ForwardArgs,
    },
    /// Per-band MAD noise estimates.
    EstimateNoise {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Match HR and LR acquisitions by time.
    Pair {
        /// CSV with id, path, iso8601_timestamp.
        #[arg(long)]
        hr_manifest: PathBuf,
        #[arg(long)]
        lr_manifest: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        max_gap_days: f64,
    },
    /// FB-PnP reconstruction with the bicubic comparator.
    Superres {
        #[arg(long)]
        lr: Option<PathBuf>,
        /// HR reference for metrics.
        #[arg(long)]
        hr: Option<PathBuf>,
        #[command(flatten)]
        forward: ForwardArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Bicubic and nearest-neighbour upsampling.
    Baseline {
        #[arg(long)]
        lr: PathBuf,
        #[arg(long)]
        hr: Option<PathBuf>,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// PSNR, SSIM and water areas of an image against a reference.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "input")]
        method: String,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// NDWI, water mask and water area.
    Ndwi {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Tau/lambda grid search against an HR reference.
    Sweep {
        #[arg(long)]
        lr: Option<PathBuf>,
        #[arg(long)]
        hr: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0, 3.0, 5.0])]
        taus: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.008, 0.08, 0.4])]
        lambdas: Vec<f64>,
        #[command(flatten)]
        forward: ForwardArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

fn apply_forward(cfg: &mut ExperimentConfig, a: &ForwardArgs) {
    let f = &mut cfg.forward;
    if let Some(v) = a.kernel_size {
        f.kernel_size = v;
    }
    if let Some(v) = a.kernel_sigma {
        f.kernel_sigma = v;
    }
    if let Some(v) = &a.kernel_file {
        f.kernel_file = Some(v.clone());
    }
    if let Some(v) = a.scale {
        f.scale = v;
    }
    if let Some(v) = a.noise_sigma {
        f.noise_sigma = v;
    }
    if let Some(v) = &a.boundary {
        f.boundary = v.clone();
    }
}

fn apply_solver(cfg: &mut ExperimentConfig, a: &SolverArgs) {
    if let Some(v) = &a.denoiser {
        cfg.denoiser.kind = v.clone();
    }
    if let Some(v) = &a.model {
        cfg.denoiser.model = Some(v.clone());
    }
    if let Some(v) = a.tv_iters {
        cfg.denoiser.tv_iters = v;
    }
    let s = &mut cfg.solver;
    if let Some(v) = a.tau {
        s.tau = v;
    }
    if let Some(v) = a.lambda {
        s.lambda = v;
    }
    if let Some(v) = a.max_iters {
        s.max_iters = v;
    }
    if let Some(v) = a.tol {
        s.tol = v;
    }
    if let Some(v) = &a.init {
        s.init = v.clone();
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn write_csv(path: &Path, f: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        f(&mut w)?;
        w.flush()?;
    }
    write_atomic(path, &buf)
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.io.out_dir = d.clone();
    }
    cfg.io.png_preview |= cli.png_preview;
    let out = cfg.io.out_dir.clone();

    match cli.command {
        Command::SynthScenes { count, height, width } => {
            let paths = write_scenes(count, height, width, cfg.seed, &out)?;
            info!("wrote {} scenes to {}", paths.len(), out.display());
        }
        Command::Degrade { hr_dir, forward } => {
            apply_forward(&mut cfg, &forward);
            cfg.validate()?;
            let model = cfg.forward.build()?;
            let manifest = make_synthetic(&hr_dir, &model, cfg.seed, &out)?;
            info!("degraded {} images, skipped {}", manifest.entries.len(), manifest.skipped.len());
        }
        Command::CalibrateKernel { manifest, hr, lr, sigma_min, sigma_max, sigma_step, forward } => {
            apply_forward(&mut cfg, &forward);
            cfg.validate()?;
            if hr.len() != lr.len() {
                return Err(Error::Validation("--hr and --lr must be given the same number of times".into()));
            }
            if !(sigma_step > 0.0 && sigma_min > 0.0 && sigma_max >= sigma_min) {
                return Err(Error::InvalidParameter("need 0 < sigma_min <= sigma_max and sigma_step > 0".into()));
            }
            let mut files: Vec<(PathBuf, PathBuf)> = hr.into_iter().zip(lr).collect();
            if let Some(m) = manifest {
                files.extend(SyntheticManifest::read_csv(&m)?.entries.into_iter().map(|e| (e.hr_path, e.lr_path)));
            }
            let scale = cfg.forward.scale;
            let pairs = files
                .iter()
                .map(|(h, l)| PairedSample::new(load_image(h)?, load_image(l)?, 0.0, scale))
                .collect::<Result<Vec<_>>>()?;
            let steps = ((sigma_max - sigma_min) / sigma_step + 1e-9).floor() as usize;
            let grid: Vec<f64> = (0..=steps).map(|i| sigma_min + i as f64 * sigma_step).collect();
            let boundary = cfg.forward.boundary.parse()?;
            let cal = calibrate_kernel(&pairs, cfg.forward.kernel_size, &grid, scale, boundary)?;
            fs::create_dir_all(&out)?;
            write_atomic(&out.join("kernel.txt"), cal.kernel.to_text().as_bytes())?;
            let mut buf = Vec::new();
            cal.write_table_csv(&mut buf)?;
            write_atomic(&out.join("kernel_calibration.csv"), &buf)?;
            println!("sigma = {} residual = {}", cal.kernel.sigma(), cal.residual);
        }
        Command::EstimateNoise { inputs } => {
            fs::create_dir_all(&out)?;
            let mut rows = Vec::new();
            for p in &inputs {
                let img = load_image(p)?;
                let est = estimate_image_noise(&img)?;
                for (name, s) in img.band_names().iter().zip(&est.per_band) {
                    rows.push([stem(p), name.to_string(), s.to_string()]);
                }
                rows.push([stem(p), "mean".into(), est.mean.to_string()]);
                println!("{}: sigma = {}", p.display(), est.mean);
            }
            write_csv(&out.join("noise.csv"), |w| {
                w.write_record(["image_id", "band", "sigma"])?;
                for r in &rows {
                    w.write_record(r)?;
                }
                Ok(())
            })?;
        }
        Command::Pair { hr_manifest, lr_manifest, max_gap_days } => {
            let pairing = pair_by_time(&read_manifest(&hr_manifest)?, &read_manifest(&lr_manifest)?, max_gap_days);
            fs::create_dir_all(&out)?;
            let mut buf = Vec::new();
            pairing.write_csv(&mut buf)?;
            write_atomic(&out.join("pairs.csv"), &buf)?;
            println!(
                "{} pairs, {} unmatched HR, {} unmatched LR",
                pairing.pairs.len(),
                pairing.unmatched_hr.len(),
                pairing.unmatched_lr.len()
            );
        }
        Command::Superres { lr, hr, forward, solver } => {
            apply_forward(&mut cfg, &forward);
            apply_solver(&mut cfg, &solver);
            if lr.is_some() {
                cfg.io.lr = lr;
            }
            if hr.is_some() {
                cfg.io.hr = hr;
            }
            let outcome = run_reconstruct(&cfg)?;
            for r in &outcome.rows {
                println!("{} {}: PSNR {:.3} dB, SSIM {:.4}, water {} m2", r.image_id, r.method, r.psnr_db, r.ssim, r.water_area_m2);
            }
            if outcome.report.diverged {
                error!("solver diverged after {} iterations", outcome.report.iterations_run);
                return Ok(EXIT_DIVERGED);
            }
        }
        Command::Baseline { lr, hr, scale } => {
            let s = scale.unwrap_or(cfg.forward.scale);
            let z = load_image(&lr)?;
            let reference = hr.as_ref().map(load_image).transpose()?;
            let id = stem(&lr);
            let bic = bicubic_upsample(&z, s)?;
            let nn = nearest_upsample(&z, s)?;
            let thr = cfg.io.water_threshold;
            let rows = vec![
                metrics_row(&id, "bicubic", &bic, reference.as_ref(), thr)?,
                metrics_row(&id, "nearest", &nn, reference.as_ref(), thr)?,
            ];
            fs::create_dir_all(&out)?;
            save_image(&bic, out.join(format!("{id}_bicubic.msr")))?;
            let mut buf = Vec::new();
            write_metrics_csv(&rows, &mut buf)?;
            write_atomic(&out.join(format!("{id}_baseline_metrics.csv")), &buf)?;
            if cfg.io.png_preview {
                preview::rgb_png(&bic.clamped(0.0, 1.0), out.join(format!("{id}_bicubic_rgb.png")))?;
            }
        }
        Command::Metrics { input, reference, method, threshold } => {
            let x = load_image(&input)?;
            let r = load_image(&reference)?;
            let row = metrics_row(&stem(&input), &method, &x, Some(&r), threshold.unwrap_or(cfg.io.water_threshold))?;
            fs::create_dir_all(&out)?;
            let mut buf = Vec::new();
            write_metrics_csv(std::slice::from_ref(&row), &mut buf)?;
            write_atomic(&out.join(format!("{}_metrics.csv", row.image_id)), &buf)?;
            println!("PSNR {:.3} dB, SSIM {:.4}", row.psnr_db, row.ssim);
        }
        Command::Ndwi { input, threshold } => {
            let x = load_image(&input)?;
            let id = stem(&input);
            let thr = threshold.unwrap_or(cfg.io.water_threshold);
            let index = ndwi(&x)?;
            let mask = threshold_water(&index, thr, x.pixel_size())?;
            let area = landsr_core::analysis::water_area(&mask);
            fs::create_dir_all(&out)?;
            preview::gray_png(index.values(), out.join(format!("{id}_ndwi.png")))?;
            preview::mask_png(&mask.mask, out.join(format!("{id}_mask.png")))?;
            write_csv(&out.join(format!("{id}_water.csv")), |w| {
                w.write_record(["image_id", "threshold", "water_pixels", "water_area_m2"])?;
                w.write_record([id.clone(), thr.to_string(), mask.water_pixels().to_string(), area.to_string()])?;
                Ok(())
            })?;
            println!("{id}: water area {area} m2");
        }
        Command::Sweep { lr, hr, taus, lambdas, forward, solver } => {
            apply_forward(&mut cfg, &forward);
            apply_solver(&mut cfg, &solver);
            if lr.is_some() {
                cfg.io.lr = lr;
            }
            if hr.is_some() {
                cfg.io.hr = hr;
            }
            let outcome = run_sweep(&cfg, &taus, &lambdas)?;
            for c in outcome.result.cells.iter().filter(|c| c.diverged) {
                warn!("cell tau={} lambda={} diverged", c.tau, c.lambda);
            }
            match &outcome.best {
                Some(b) => println!("best: tau={} lambda={} PSNR {:.3} dB", b.tau, b.lambda, b.final_psnr),
                None => {
                    error!("every sweep cell diverged");
                    return Ok(EXIT_DIVERGED);
                }
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
