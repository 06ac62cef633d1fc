//! `hilite` command line: every pipeline as a subcommand with a
//! machine-readable JSON report on stdout.
//!
//! Exit codes: 0 success, 1 domain error (single-line JSON on stdout),
//! 2 usage error (clap usage text on stderr).

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use hilite::diffusion::{self, ConditioningStack};
use hilite::imagecore::{self, to_grayscale, ImageBuffer};
use hilite::metrics::{self, RmseScale};
use hilite::prior::{self, PriorConfig};
use hilite::pyramid;
use hilite::qc::{self, AlignmentConfig};

#[derive(Parser)]
#[command(name = "hilite", version, about = "Highlight-removal toolkit for document image pairs")]
struct Cli {
    /// optional TOML config merged under CLI-wins precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Laplacian pyramid decomposition and reconstruction
    #[command(subcommand)]
    Pyramid(PyramidCmd),
    /// Highlight location prior generation
    #[command(subcommand)]
    Prior(PriorCmd),
    /// Evaluate the prior pipeline against a ground-truth mask
    Maskeval(MaskevalArgs),
    /// Full-reference image metrics
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Dataset quality control
    #[command(subcommand)]
    Qc(QcCmd),
    /// Diffusion round-trip demonstrations
    #[command(subcommand)]
    Diffusion(DiffusionCmd),
}

#[derive(Subcommand)]
enum PyramidCmd {
    /// Decompose an image into a pyramid directory
    Decompose {
        input: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an image from a pyramid directory
    Reconstruct {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PriorCmd {
    /// Generate soft and binary highlight masks from a pair
    Gen {
        highlight: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        no_stretch: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MaskevalArgs {
    highlight: PathBuf,
    gt: PathBuf,
    /// ground-truth binary mask (nonzero = highlight)
    gt_mask: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    no_stretch: bool,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Compare two images
    Cmp { a: PathBuf, b: PathBuf },
    /// Compare same-named files in two directories; CSV roll-up to --out
    Batch {
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "HILITE_JOBS")]
        jobs: Option<usize>,
    },
}

#[derive(Subcommand)]
enum QcCmd {
    /// Scan a dataset root into a manifest CSV
    Scan {
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// also write the manifest as JSON lines
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
    /// Alignment-check every pair in a manifest
    Check {
        manifest: PathBuf,
        /// alignment reports as JSON lines
        #[arg(long)]
        out: PathBuf,
        /// write the kept (aligned) manifest here
        #[arg(long)]
        keep: Option<PathBuf>,
        #[arg(long)]
        residual_tol: Option<f64>,
        #[arg(long)]
        max_shift: Option<i32>,
        #[arg(long)]
        dilation: Option<usize>,
        #[arg(long, env = "HILITE_JOBS")]
        jobs: Option<usize>,
    },
    /// Stratified sampling of a manifest
    Sample {
        manifest: PathBuf,
        #[arg(long)]
        fraction: f64,
        /// comma-separated stratum fields
        #[arg(long, value_delimiter = ',')]
        strata: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DiffusionCmd {
    /// Forward/backward round trip with the perfect-oracle denoiser
    Demo {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Defaults that a TOML config may override; CLI flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    depth: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    jobs: Option<usize>,
    steps: Option<usize>,
    n_steps: Option<usize>,
    residual_tol: Option<f64>,
    max_shift: Option<i32>,
    dilation: Option<usize>,
}

#[derive(Debug)]
struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    fn new(code: &'static str, err: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: err.to_string(),
        }
    }
}

macro_rules! impl_from_error {
    ($ty:ty, $code:literal) => {
        impl From<$ty> for CliError {
            fn from(err: $ty) -> Self {
                CliError::new($code, err)
            }
        }
    };
}

impl_from_error!(imagecore::ImageError, "image");
impl_from_error!(pyramid::PyramidError, "pyramid");
impl_from_error!(prior::PriorError, "prior");
impl_from_error!(metrics::MetricError, "metrics");
impl_from_error!(diffusion::DiffusionError, "diffusion");
impl_from_error!(qc::QcError, "qc");
impl_from_error!(std::io::Error, "io");

struct Report {
    subcommand: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    metrics: BTreeMap<String, Value>,
    seed: Option<u64>,
}

impl Report {
    fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
            seed: None,
        }
    }

    fn emit(&self, elapsed: f64) {
        let out = json!({
            "subcommand": self.subcommand,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "metrics": self.metrics,
            "seed": self.seed,
            "elapsed": elapsed,
        });
        println!("{out}");
    }
}

/// Non-finite values serialize as the string "inf" for portability.
fn scalar(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let start = Instant::now();
    match run(cli.command, &config) {
        Ok(report) => {
            report.emit(start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    println!("{}", json!({"code": e.code, "message": e.message}));
    ExitCode::FAILURE
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::new("config", format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::new("config", e))
        }
    }
}

fn run(command: Command, cfg: &Config) -> Result<Report, CliError> {
    match command {
        Command::Pyramid(cmd) => run_pyramid(cmd, cfg),
        Command::Prior(cmd) => run_prior(cmd, cfg),
        Command::Maskeval(args) => run_maskeval(args, cfg),
        Command::Metrics(cmd) => run_metrics(cmd, cfg),
        Command::Qc(cmd) => run_qc(cmd, cfg),
        Command::Diffusion(cmd) => run_diffusion(cmd, cfg),
    }
}

fn run_pyramid(cmd: PyramidCmd, cfg: &Config) -> Result<Report, CliError> {
    match cmd {
        PyramidCmd::Decompose { input, depth, out } => {
            let depth = depth.or(cfg.depth).unwrap_or(2);
            let img = imagecore::load_image(&input)?;
            let pyr = pyramid::decompose(&img, depth)?;
            pyramid::export_pyramid(&pyr, &out)?;
            let mut report = Report::new("pyramid decompose");
            report.inputs.push(input);
            for i in 0..pyr.depth() {
                report.outputs.push(out.join(format!("high_{i}.png")));
            }
            report.outputs.push(out.join("base.png"));
            report.outputs.push(out.join("pyramid.json"));
            report.metrics.insert("depth".into(), json!(depth));
            Ok(report)
        }
        PyramidCmd::Reconstruct { dir, out } => {
            let pyr = pyramid::import_pyramid(&dir)?;
            let img = pyramid::reconstruct(&pyr)?.clamped();
            imagecore::save_image(&img, &out, 16)?;
            let mut report = Report::new("pyramid reconstruct");
            report.inputs.push(dir);
            report.outputs.push(out);
            report.metrics.insert("depth".into(), json!(pyr.depth()));
            Ok(report)
        }
    }
}

fn prior_config(alpha: Option<f64>, no_stretch: bool, cfg: &Config) -> PriorConfig {
    PriorConfig {
        alpha_percentile: alpha.or(cfg.alpha).unwrap_or(80.0),
        apply_stretch: !no_stretch,
        ..Default::default()
    }
}

fn run_prior(cmd: PriorCmd, cfg: &Config) -> Result<Report, CliError> {
    let PriorCmd::Gen {
        highlight,
        gt,
        alpha,
        no_stretch,
        out,
    } = cmd;
    let pcfg = prior_config(alpha, no_stretch, cfg);
    let hl_img = imagecore::load_image(&highlight)?;
    let gt_img = imagecore::load_image(&gt)?;
    let result = prior::generate_prior(&hl_img, &gt_img, &pcfg)?;

    std::fs::create_dir_all(&out)?;
    let soft_path = out.join("soft.png");
    let binary_path = out.join("binary.png");
    let record_path = out.join("prior.json");
    imagecore::save_image(&result.soft.to_gray().to_buffer(), &soft_path, 16)?;
    let binary_img = ImageBuffer::new(
        result.binary.width,
        result.binary.height,
        1,
        result.binary.data.iter().map(|&v| v as f32).collect(),
    );
    imagecore::save_image(&binary_img, &binary_path, 8)?;
    let record = json!({
        "threshold": result.threshold,
        "alpha_percentile": pcfg.alpha_percentile,
        "stretch_applied": pcfg.apply_stretch,
    });
    std::fs::write(&record_path, format!("{record}\n"))?;

    let mut report = Report::new("prior gen");
    report.inputs = vec![highlight, gt];
    report.outputs = vec![soft_path, binary_path, record_path];
    report
        .metrics
        .insert("threshold".into(), scalar(result.threshold as f64));
    report.metrics.insert(
        "mask_fraction".into(),
        scalar(result.binary.count_ones() as f64 / result.binary.data.len() as f64),
    );
    Ok(report)
}

fn run_maskeval(args: MaskevalArgs, cfg: &Config) -> Result<Report, CliError> {
    let pcfg = prior_config(args.alpha, args.no_stretch, cfg);
    let hl_img = imagecore::load_image(&args.highlight)?;
    let gt_img = imagecore::load_image(&args.gt)?;
    let result = prior::generate_prior(&hl_img, &gt_img, &pcfg)?;

    let mask_img = imagecore::load_image(&args.gt_mask)?;
    let gray = to_grayscale(&mask_img);
    let gt_mask = hilite::BinaryMask::new(
        gray.width,
        gray.height,
        gray.data.iter().map(|&v| u8::from(v > 0.5)).collect(),
    );
    let counts = metrics::mask_confusion(&result.binary, &gt_mask)?;
    let acc = metrics::accuracy(&counts);
    let ber = metrics::ber(&counts)?;

    let mut report = Report::new("maskeval");
    report.inputs = vec![args.highlight, args.gt, args.gt_mask];
    report.metrics.insert("acc".into(), scalar(acc));
    report.metrics.insert("ber".into(), scalar(ber));
    report
        .metrics
        .insert("threshold".into(), scalar(result.threshold as f64));
    report
        .metrics
        .insert("stretch_applied".into(), json!(pcfg.apply_stretch));
    Ok(report)
}

fn pair_metrics(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, f64, f64), CliError> {
    let psnr = metrics::psnr(a, b)?;
    let ssim = metrics::ssim(&to_grayscale(a), &to_grayscale(b))?;
    let rmse = metrics::rmse(a, b, RmseScale::Scale255)?;
    Ok((psnr, ssim, rmse))
}

/// Order-stable striped parallel map: worker `k` handles indices
/// `i % jobs == k`, results land back at index `i`.
fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for worker in 0..jobs {
            let slots = &slots;
            let f = &f;
            scope.spawn(move || {
                for (i, item) in items.iter().enumerate() {
                    if i % jobs == worker {
                        let r = f(item);
                        slots.lock().unwrap()[i] = Some(r);
                    }
                }
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

fn run_metrics(cmd: MetricsCmd, cfg: &Config) -> Result<Report, CliError> {
    match cmd {
        MetricsCmd::Cmp { a, b } => {
            let img_a = imagecore::load_image(&a)?;
            let img_b = imagecore::load_image(&b)?;
            let (psnr, ssim, rmse) = pair_metrics(&img_a, &img_b)?;
            let mut report = Report::new("metrics cmp");
            report.inputs = vec![a, b];
            report.metrics.insert("psnr_db".into(), scalar(psnr));
            report.metrics.insert("ssim".into(), scalar(ssim));
            report.metrics.insert("rmse_255".into(), scalar(rmse));
            Ok(report)
        }
        MetricsCmd::Batch {
            dir_a,
            dir_b,
            out,
            jobs,
        } => {
            let jobs = jobs.or(cfg.jobs).unwrap_or(1);
            let mut names: Vec<String> = std::fs::read_dir(&dir_a)?
                .filter_map(|e| e.ok())
                .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
                .filter_map(|e| e.file_name().into_string().ok())
                .filter(|n| dir_b.join(n).exists())
                .collect();
            names.sort();
            if names.is_empty() {
                return Err(CliError::new(
                    "metrics",
                    format!(
                        "no matching file names between {} and {}",
                        dir_a.display(),
                        dir_b.display()
                    ),
                ));
            }
            let results = parallel_map(&names, jobs, |name| -> Result<_, CliError> {
                let a = imagecore::load_image(dir_a.join(name))?;
                let b = imagecore::load_image(dir_b.join(name))?;
                pair_metrics(&a, &b)
            });

            let mut writer = csv::Writer::from_path(&out).map_err(|e| CliError::new("io", e))?;
            writer
                .write_record(["name", "psnr_db", "ssim", "rmse_255"])
                .map_err(|e| CliError::new("io", e))?;
            let mut mean = (0.0, 0.0, 0.0);
            for (name, result) in names.iter().zip(results) {
                let (psnr, ssim, rmse) = result?;
                writer
                    .write_record([
                        name.as_str(),
                        &psnr.to_string(),
                        &ssim.to_string(),
                        &rmse.to_string(),
                    ])
                    .map_err(|e| CliError::new("io", e))?;
                mean = (mean.0 + psnr, mean.1 + ssim, mean.2 + rmse);
            }
            writer.flush().map_err(|e| CliError::new("io", e))?;
            let n = names.len() as f64;

            let mut report = Report::new("metrics batch");
            report.inputs = vec![dir_a, dir_b];
            report.outputs = vec![out];
            report.metrics.insert("pairs".into(), json!(names.len()));
            report.metrics.insert("mean_psnr_db".into(), scalar(mean.0 / n));
            report.metrics.insert("mean_ssim".into(), scalar(mean.1 / n));
            report.metrics.insert("mean_rmse_255".into(), scalar(mean.2 / n));
            Ok(report)
        }
    }
}

fn run_qc(cmd: QcCmd, cfg: &Config) -> Result<Report, CliError> {
    match cmd {
        QcCmd::Scan { root, out, jsonl } => {
            let result = qc::scan_manifest(&root)?;
            qc::write_manifest_csv(&result.manifest, &out)?;
            let mut report = Report::new("qc scan");
            report.inputs.push(root);
            report.outputs.push(out);
            if let Some(path) = jsonl {
                qc::write_manifest_jsonl(&result.manifest, &path)?;
                report.outputs.push(path);
            }
            report
                .metrics
                .insert("pairs".into(), json!(result.manifest.len()));
            report
                .metrics
                .insert("skipped".into(), json!(result.skipped.len()));
            Ok(report)
        }
        QcCmd::Check {
            manifest,
            out,
            keep,
            residual_tol,
            max_shift,
            dilation,
            jobs,
        } => {
            let acfg = AlignmentConfig {
                dilation: dilation.or(cfg.dilation).unwrap_or(5),
                max_shift: max_shift.or(cfg.max_shift).unwrap_or(8),
                residual_tol: residual_tol.or(cfg.residual_tol).unwrap_or(0.02),
            };
            let jobs = jobs.or(cfg.jobs).unwrap_or(1);
            let m = qc::read_manifest_csv(&manifest)?;
            if m.is_empty() {
                return Err(CliError::new("qc", "empty manifest"));
            }
            let reports = parallel_map(&m.records, jobs, |record| {
                qc::check_alignment(record, &acfg)
            });
            let mut all = Vec::with_capacity(m.len());
            let mut kept = Vec::new();
            for (record, result) in m.records.iter().zip(reports) {
                let r = result?;
                if r.verdict == qc::Verdict::Aligned {
                    kept.push(record.clone());
                }
                all.push(r);
            }
            qc::write_reports_jsonl(&all, &out)?;
            let rejected = all.len() - kept.len();

            let mut report = Report::new("qc check");
            report.inputs.push(manifest);
            report.outputs.push(out);
            if let Some(path) = keep {
                let kept_manifest = qc::Manifest {
                    records: kept.clone(),
                    source_root: m.source_root.clone(),
                };
                qc::write_manifest_csv(&kept_manifest, &path)?;
                report.outputs.push(path);
            }
            report.metrics.insert("kept".into(), json!(kept.len()));
            report.metrics.insert("rejected".into(), json!(rejected));
            Ok(report)
        }
        QcCmd::Sample {
            manifest,
            fraction,
            strata,
            seed,
            out,
        } => {
            let seed = seed.or(cfg.seed).unwrap_or(0);
            let strata = if strata.is_empty() {
                qc::STRATUM_FIELDS.iter().map(|s| s.to_string()).collect()
            } else {
                strata
            };
            let m = qc::read_manifest_csv(&manifest)?;
            let sampled = qc::stratified_sample(&m, fraction, &strata, seed)?;
            qc::write_manifest_csv(&sampled, &out)?;
            let mut report = Report::new("qc sample");
            report.inputs.push(manifest);
            report.outputs.push(out);
            report.seed = Some(seed);
            report.metrics.insert("selected".into(), json!(sampled.len()));
            report.metrics.insert("fraction".into(), scalar(fraction));
            Ok(report)
        }
    }
}

fn run_diffusion(cmd: DiffusionCmd, cfg: &Config) -> Result<Report, CliError> {
    let DiffusionCmd::Demo {
        input,
        out,
        steps,
        n_steps,
        seed,
    } = cmd;
    let steps = steps.or(cfg.steps).unwrap_or(diffusion::DEFAULT_STEPS);
    let n_steps = n_steps.or(cfg.n_steps).unwrap_or(10);
    let seed = seed.or(cfg.seed).unwrap_or(0);

    let img = imagecore::load_image(&input)?;
    let sched = diffusion::linear_schedule(
        steps,
        diffusion::DEFAULT_BETA_START,
        diffusion::DEFAULT_BETA_END,
    )?;
    let pyr = pyramid::decompose(&img, 1)?;
    let high = pyr.highs[0].clone();
    let y = diffusion::build_conditioning(&high, &pyr.base, &pyr.base)?;

    // perfect-oracle denoiser: always answers the true high-frequency
    // layer, logging the per-step prediction error
    let truth = high.clone();
    let errors: RefCell<Vec<f64>> = RefCell::new(Vec::new());
    let oracle = |_: &ImageBuffer, _t: usize, _: &ConditioningStack| {
        let pred = truth.clone();
        errors
            .borrow_mut()
            .push(diffusion::dm_loss(&truth, &pred).unwrap_or(f64::NAN));
        pred
    };
    let recovered_high = diffusion::sample(&oracle, &y, &sched, n_steps, seed)?;
    let per_step_mse = errors.into_inner();

    let recovered = pyramid::reconstruct(&pyramid::Pyramid {
        highs: vec![recovered_high],
        base: pyr.base.clone(),
    })?
    .clamped();
    std::fs::create_dir_all(&out)?;
    let img_path = out.join("recovered.png");
    let report_path = out.join("demo.json");
    imagecore::save_image(&recovered, &img_path, 16)?;

    let max_err = img
        .data
        .iter()
        .zip(&recovered.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let demo = json!({
        "steps": steps,
        "n_steps": n_steps,
        "seed": seed,
        "per_step_mse": per_step_mse,
        "max_reconstruction_err": max_err,
    });
    std::fs::write(&report_path, format!("{demo}\n"))?;

    let mut report = Report::new("diffusion demo");
    report.inputs.push(input);
    report.outputs = vec![img_path, report_path];
    report.seed = Some(seed);
    report
        .metrics
        .insert("max_reconstruction_err".into(), scalar(max_err as f64));
    report.metrics.insert("n_steps".into(), json!(n_steps));
    Ok(report)
}
