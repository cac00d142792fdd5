//! `sck` — sparse-coding key-point detector CLI.
//!
//! Exit codes: 0 success, 1 runtime (I/O or processing) failure, 2 usage
//! or validation error, 3 property-check failure (`eval-illum` mismatch).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sck_core::detector::{detect, format_keypoint_list, DetectorConfig};
use sck_core::dictionary::{build_haar, Dictionary};
use sck_core::eval::{illumination_harness, matching_score, warp_image, Homography};
use sck_core::image::{load_image, write_image, write_overlay, GrayImage};

#[derive(Parser)]
#[command(name = "sck", version, about = "Sparse-coding key-point detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect key-points and print them as `x y size cm sm` lines
    Detect(DetectArgs),
    /// Evaluate repeatability and matching score of an image pair under a
    /// known homography
    EvalPair(EvalPairArgs),
    /// Verify detection invariance under the intensity change I -> a*I + b
    EvalIllum(EvalIllumArgs),
    /// Warp an image through a homography
    Warp(WarpArgs),
}

/// Detector parameters shared by the detection-based subcommands.
#[derive(Args, Debug, Clone, Default)]
struct DetectorFlags {
    /// Block side length (odd, >= 3)
    #[arg(long)]
    n: Option<usize>,
    /// LASSO L1 weight
    #[arg(long)]
    lambda: Option<f64>,
    /// Lower complexity limit
    #[arg(long = "cm-min")]
    cm_min: Option<usize>,
    /// Upper complexity limit (default: dictionary atom count)
    #[arg(long = "cm-max")]
    cm_max: Option<usize>,
    /// Non-maxima suppression window side (odd)
    #[arg(long = "nms")]
    nms: Option<usize>,
    /// Maximum number of key-points returned
    #[arg(long = "topk")]
    topk: Option<usize>,
    /// Pre-filter Gaussian sigma
    #[arg(long)]
    sigma: Option<f64>,
    /// Pre-filter kernel side (odd)
    #[arg(long = "gsize")]
    gsize: Option<usize>,
    /// Strength weight on the non-zero count
    #[arg(long)]
    a1: Option<f64>,
    /// Strength weight on the coefficient L1 norm
    #[arg(long)]
    a2: Option<f64>,
    /// Block step
    #[arg(long)]
    stride: Option<usize>,
    /// Config file (`key = value` lines, `#` comments); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker thread cap; the output is identical for any value
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DetectArgs {
    /// Input image (PGM P2/P5 or 8-bit PNG)
    image: PathBuf,
    #[command(flatten)]
    flags: DetectorFlags,
    /// Write the key-point list to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an overlay image (.ppm or .png)
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct EvalPairArgs {
    /// First image
    image_a: PathBuf,
    /// Second image
    image_b: PathBuf,
    /// Homography file: 9 whitespace-separated reals, row-major, mapping
    /// image-A coordinates to image-B coordinates
    homography: PathBuf,
    #[command(flatten)]
    flags: DetectorFlags,
}

#[derive(Args)]
struct EvalIllumArgs {
    /// Input image
    image: PathBuf,
    /// Multiplicative gain (must be > 0)
    #[arg(allow_hyphen_values = true)]
    a: f64,
    /// Additive offset
    #[arg(allow_hyphen_values = true)]
    b: f64,
    #[command(flatten)]
    flags: DetectorFlags,
}

#[derive(Args)]
struct WarpArgs {
    /// Input image
    image: PathBuf,
    /// Homography file: 9 whitespace-separated reals, row-major
    homography: PathBuf,
    /// Output image path (.pgm or .png)
    output: PathBuf,
}

/// A failed command: exit code plus a one-line diagnostic.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(args) => cmd_detect(args),
        Command::EvalPair(args) => cmd_eval_pair(args),
        Command::EvalIllum(args) => cmd_eval_illum(args),
        Command::Warp(args) => cmd_warp(args),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("sck: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Runs `f` on a rayon pool capped at `threads` workers (or the global
/// pool when unset).
fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| runtime(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn prepare(flags: &DetectorFlags) -> Result<(config::Resolved, Dictionary), Failure> {
    let file = match &flags.config {
        Some(path) => config::parse_config_file(path).map_err(usage)?,
        None => config::FileValues::default(),
    };
    let resolved = config::resolve(flags, file);
    resolved.detector.validate().map_err(|e| usage(e.to_string()))?;
    let n = resolved.detector.n;
    let dict = build_haar(n, Dictionary::default_levels(n)).map_err(|e| usage(e.to_string()))?;
    Ok((resolved, dict))
}

fn load(path: &Path) -> Result<GrayImage, Failure> {
    load_image(path).map_err(|e| runtime(e.to_string()))
}

fn run_detect(
    img: &GrayImage,
    dict: &Dictionary,
    cfg: &DetectorConfig,
    threads: Option<usize>,
) -> Result<sck_core::detector::DetectResult, Failure> {
    with_pool(threads, || detect(img, dict, cfg))?.map_err(|e| runtime(e.to_string()))
}

fn cmd_detect(args: DetectArgs) -> Result<ExitCode, Failure> {
    let (resolved, dict) = prepare(&args.flags)?;
    let cfg = &resolved.detector;
    let img = load(&args.image)?;
    let result = run_detect(&img, &dict, cfg, resolved.threads)?;
    if result.stats.image_too_small {
        eprintln!(
            "sck: image {}x{} is smaller than one {}x{} block; no key-points",
            img.width(),
            img.height(),
            cfg.n,
            cfg.n
        );
    }
    let cm_max = cfg.cm_max.unwrap_or(dict.len());
    let text = format_keypoint_list(&result.keypoints, cfg.n, cfg.lambda, cfg.cm_min, cm_max);

    let out = args.out.or(resolved.out);
    match out {
        Some(path) => std::fs::write(&path, &text)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    if let Some(path) = args.overlay.or(resolved.overlay) {
        write_overlay(&img, &result.keypoints, &path).map_err(|e| runtime(e.to_string()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn read_homography(path: &Path) -> Result<Homography, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| runtime(format!("cannot read homography {}: {e}", path.display())))?;
    let values: Vec<f64> = text
        .split_ascii_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| usage(format!("homography file: not a number: {t}")))
        })
        .collect::<Result<_, _>>()?;
    let nine: [f64; 9] = values.try_into().map_err(|v: Vec<f64>| {
        usage(format!("homography file must hold 9 numbers, found {}", v.len()))
    })?;
    Homography::from_row_major(nine).map_err(|e| usage(e.to_string()))
}

fn cmd_eval_pair(args: EvalPairArgs) -> Result<ExitCode, Failure> {
    let (resolved, dict) = prepare(&args.flags)?;
    let cfg = &resolved.detector;
    let h = read_homography(&args.homography)?;
    let img_a = load(&args.image_a)?;
    let img_b = load(&args.image_b)?;
    let kps_a = run_detect(&img_a, &dict, cfg, resolved.threads)?.keypoints;
    let kps_b = run_detect(&img_b, &dict, cfg, resolved.threads)?.keypoints;
    let result = with_pool(resolved.threads, || {
        matching_score(&kps_a, &kps_b, &h, &img_a, &img_b)
    })?
    .map_err(|e| runtime(e.to_string()))?;
    println!(
        "{}",
        serde_json::to_string(&result).expect("EvalResult serializes")
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval_illum(args: EvalIllumArgs) -> Result<ExitCode, Failure> {
    if args.a.is_nan() || args.a <= 0.0 {
        return Err(usage(format!("gain a must be > 0, got {}", args.a)));
    }
    let (resolved, dict) = prepare(&args.flags)?;
    let img = load(&args.image)?;
    let report = with_pool(resolved.threads, || {
        illumination_harness(&img, &dict, &resolved.detector, args.a, args.b)
    })?
    .map_err(|e| runtime(e.to_string()))?;
    if report.passed() {
        println!(
            "PASS: {} key-points identical under I -> {}*I + {}",
            report.base_count, report.gain, report.offset
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "FAIL: {} mismatches between {} base and {} transformed key-points",
            report.mismatches.len(),
            report.base_count,
            report.transformed_count
        );
        for m in &report.mismatches {
            println!("{m}");
        }
        Ok(ExitCode::from(3))
    }
}

fn cmd_warp(args: WarpArgs) -> Result<ExitCode, Failure> {
    let h = read_homography(&args.homography)?;
    let img = load(&args.image)?;
    let warped = warp_image(&img, &h);
    write_image(&warped.image, &args.output).map_err(|e| runtime(e.to_string()))?;
    Ok(ExitCode::SUCCESS)
}
