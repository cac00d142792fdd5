//! Detection pipeline: Gaussian pre-filter, per-block normalization and
//! sparse coding, complexity gating, strength ranking, non-maxima
//! suppression and the top-K cut.
//!
//! Blocks are processed in parallel against the shared dictionary and the
//! per-block results are merged back in row-major order before NMS, so the
//! output is identical for any worker count.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use thiserror::Error;

use crate::dictionary::Dictionary;
use crate::image::GrayImage;
use crate::lasso::{self, SolverParams};

/// A detected key-point: block center, region radius, and the two
/// sparse-code measures the pipeline ranks by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyPoint {
    /// Column of the block center.
    pub x: usize,
    /// Row of the block center.
    pub y: usize,
    /// Region radius `(n/2)·√2`, covering every pixel of the block.
    pub size: f64,
    /// Complexity measure: non-zero count of the block's sparse code.
    pub cm: usize,
    /// Strength measure `a1·‖α‖₀ + a2·‖α‖₁`.
    pub sm: f64,
}

/// Detector configuration; defaults follow the standard setup
/// (11×11 blocks, λ = 0.15, 1000 key-points).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Block side length, odd and >= 3.
    pub n: usize,
    /// LASSO L1 weight.
    pub lambda: f64,
    /// Lower complexity limit (inclusive).
    pub cm_min: usize,
    /// Upper complexity limit (inclusive); `None` means the dictionary
    /// atom count, i.e. effectively open.
    pub cm_max: Option<usize>,
    /// Non-maxima suppression window side, odd.
    pub nms_window: usize,
    /// Top-K cap on the returned key-points.
    pub max_keypoints: usize,
    /// Pre-filter Gaussian sigma.
    pub gauss_sigma: f64,
    /// Pre-filter kernel side, odd.
    pub gauss_size: usize,
    /// Strength weight on ‖α‖₀.
    pub a1: f64,
    /// Strength weight on ‖α‖₁.
    pub a2: f64,
    /// Block step.
    pub stride: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            n: 11,
            lambda: 0.15,
            cm_min: 3,
            cm_max: None,
            nms_window: 5,
            max_keypoints: 1000,
            gauss_sigma: 0.5,
            gauss_size: 3,
            a1: 1.0,
            a2: 1.0,
            stride: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("block side must be odd and >= 3, got {0}")]
    BlockSide(usize),
    #[error("lambda must be > 0, got {0}")]
    Lambda(f64),
    #[error("cm limits invalid: min {min} > max {max}")]
    CmRange { min: usize, max: usize },
    #[error("nms window must be odd and >= 1, got {0}")]
    NmsWindow(usize),
    #[error("gaussian kernel size must be odd and >= 1, got {0}")]
    GaussSize(usize),
    #[error("gaussian sigma must be > 0, got {0}")]
    GaussSigma(f64),
    #[error("strength weights must be > 0, got a1={a1} a2={a2}")]
    Weights { a1: f64, a2: f64 },
    #[error("stride must be >= 1")]
    Stride,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 3 || self.n.is_multiple_of(2) {
            return Err(ConfigError::BlockSide(self.n));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return Err(ConfigError::Lambda(self.lambda));
        }
        if let Some(max) = self.cm_max {
            if self.cm_min > max {
                return Err(ConfigError::CmRange {
                    min: self.cm_min,
                    max,
                });
            }
        }
        if self.nms_window.is_multiple_of(2) {
            return Err(ConfigError::NmsWindow(self.nms_window));
        }
        if self.gauss_size.is_multiple_of(2) {
            return Err(ConfigError::GaussSize(self.gauss_size));
        }
        if self.gauss_sigma.is_nan() || self.gauss_sigma <= 0.0 {
            return Err(ConfigError::GaussSigma(self.gauss_sigma));
        }
        let bad_weight = |w: f64| w.is_nan() || w <= 0.0;
        if bad_weight(self.a1) || bad_weight(self.a2) {
            return Err(ConfigError::Weights {
                a1: self.a1,
                a2: self.a2,
            });
        }
        if self.stride < 1 {
            return Err(ConfigError::Stride);
        }
        Ok(())
    }

    /// Key-point region radius for this block size.
    pub fn keypoint_size(&self) -> f64 {
        (self.n as f64 / 2.0) * SQRT_2
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dictionary built for n={dict_n} but config requests n={cfg_n}")]
    BlockSizeMismatch { dict_n: usize, cfg_n: usize },
}

/// Per-run diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectStats {
    /// Fully interior blocks visited.
    pub blocks_visited: usize,
    /// Blocks skipped because they were constant (no structure).
    pub degenerate_blocks: usize,
    /// Blocks skipped because the solver hit its sweep cap.
    pub solver_failures: usize,
    /// Blocks whose complexity fell outside [cm_min, cm_max].
    pub outside_cm_range: usize,
    /// Set when the image is smaller than one block; the result is empty.
    pub image_too_small: bool,
}

#[derive(Debug, Clone)]
pub struct DetectResult {
    pub keypoints: Vec<KeyPoint>,
    pub stats: DetectStats,
}

/// Separable Gaussian low-pass filter. The kernel is sampled at integer
/// offsets, normalized to sum 1, and borders are handled by edge
/// replication. Output dimensions equal input dimensions.
pub fn gaussian_filter(img: &GrayImage, sigma: f64, size: usize) -> GrayImage {
    assert!(sigma > 0.0, "sigma must be positive");
    assert!(size % 2 == 1, "kernel size must be odd");
    let half = (size / 2) as i64;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= sum);

    let (w, h) = (img.width(), img.height());
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, j) in (-half..=half).enumerate() {
                acc += kernel[ki] * row[clamp(x as i64 + j, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, j) in (-half..=half).enumerate() {
                acc += kernel[ki] * tmp[clamp(y as i64 + j, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage::new(w, h, out).expect("filter preserves finiteness")
}

/// Degenerate threshold: blocks whose centered energy falls below this
/// have no structure and are skipped.
const DEGENERATE_NORM: f64 = 1e-10;

/// Mean-centers and L2-normalizes a flattened block. Returns `None` for
/// (near-)constant blocks.
pub fn normalize_block(block: &[f64]) -> Option<Vec<f64>> {
    let mut v = block.to_vec();
    if normalize_in_place(&mut v) {
        Some(v)
    } else {
        None
    }
}

fn normalize_in_place(v: &mut [f64]) -> bool {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Runs the full detection pipeline. Images smaller than one block yield
/// an empty result with `stats.image_too_small` set.
pub fn detect(
    img: &GrayImage,
    dict: &Dictionary,
    cfg: &DetectorConfig,
) -> Result<DetectResult, DetectError> {
    cfg.validate()?;
    if dict.n() != cfg.n {
        return Err(DetectError::BlockSizeMismatch {
            dict_n: dict.n(),
            cfg_n: cfg.n,
        });
    }
    let n = cfg.n;
    if img.width() < n || img.height() < n {
        return Ok(DetectResult {
            keypoints: Vec::new(),
            stats: DetectStats {
                image_too_small: true,
                ..DetectStats::default()
            },
        });
    }

    let filtered = gaussian_filter(img, cfg.gauss_sigma, cfg.gauss_size);
    let half = n / 2;
    let cm_max = cfg.cm_max.unwrap_or(dict.len());
    let size = cfg.keypoint_size();
    let params = SolverParams::new(cfg.lambda);
    let row_centers: Vec<usize> = (half..img.height() - half).step_by(cfg.stride).collect();

    // One task per block row; results are merged in row-major order so the
    // output does not depend on scheduling.
    let per_row: Vec<(Vec<KeyPoint>, DetectStats)> = row_centers
        .par_iter()
        .map(|&cy| {
            let mut kps = Vec::new();
            let mut stats = DetectStats::default();
            let mut block = vec![0.0; n * n];
            let mut cx = half;
            while cx < img.width() - half {
                stats.blocks_visited += 1;
                filtered.copy_block(cx - half, cy - half, n, &mut block);
                if !normalize_in_place(&mut block) {
                    stats.degenerate_blocks += 1;
                    cx += cfg.stride;
                    continue;
                }
                match lasso::solve_lasso(dict, &block, &params) {
                    Ok(code) => {
                        let cm = lasso::complexity_measure(&code);
                        if cm < cfg.cm_min || cm > cm_max {
                            stats.outside_cm_range += 1;
                        } else {
                            kps.push(KeyPoint {
                                x: cx,
                                y: cy,
                                size,
                                cm,
                                sm: lasso::strength_measure(&code, cfg.a1, cfg.a2),
                            });
                        }
                    }
                    Err(_) => stats.solver_failures += 1,
                }
                cx += cfg.stride;
            }
            (kps, stats)
        })
        .collect();

    let mut stats = DetectStats::default();
    let mut candidates = Vec::new();
    for (kps, s) in per_row {
        candidates.extend(kps);
        stats.blocks_visited += s.blocks_visited;
        stats.degenerate_blocks += s.degenerate_blocks;
        stats.solver_failures += s.solver_failures;
        stats.outside_cm_range += s.outside_cm_range;
    }

    let mut keypoints = nms(&candidates, cfg.nms_window);
    keypoints.sort_by(|a, b| {
        b.sm.total_cmp(&a.sm)
            .then_with(|| (a.y, a.x).cmp(&(b.y, b.x)))
    });
    keypoints.truncate(cfg.max_keypoints);
    Ok(DetectResult { keypoints, stats })
}

/// Non-maxima suppression. A key-point survives iff its SM strictly
/// dominates every other key-point whose center lies in the window×window
/// square around it; on an exact SM tie the point earliest in row-major
/// center order wins. Input order is preserved in the output.
pub fn nms(kps: &[KeyPoint], window: usize) -> Vec<KeyPoint> {
    assert!(window % 2 == 1, "window must be odd");
    let w2 = (window / 2) as i64;
    let mut order: Vec<usize> = (0..kps.len()).collect();
    order.sort_by_key(|&i| (kps[i].y, kps[i].x));
    let sorted_ys: Vec<i64> = order.iter().map(|&i| kps[i].y as i64).collect();

    let mut out = Vec::with_capacity(kps.len());
    for (idx, kp) in kps.iter().enumerate() {
        let lo = sorted_ys.partition_point(|&y| y < kp.y as i64 - w2);
        let hi = sorted_ys.partition_point(|&y| y <= kp.y as i64 + w2);
        let survives = order[lo..hi].iter().all(|&j| {
            if j == idx {
                return true;
            }
            let other = &kps[j];
            if (other.x as i64 - kp.x as i64).abs() > w2 {
                return true;
            }
            kp.sm > other.sm || (kp.sm == other.sm && (kp.y, kp.x) < (other.y, other.x))
        });
        if survives {
            out.push(*kp);
        }
    }
    out
}

/// Formats key-points in the exchange format: a header line
/// `# SCK n=<n> lambda=<λ> cm=[<min>,<max>]` followed by one
/// `x y size cm sm` line per key-point (size and sm to 6 decimals).
pub fn format_keypoint_list(
    kps: &[KeyPoint],
    n: usize,
    lambda: f64,
    cm_min: usize,
    cm_max: usize,
) -> String {
    let mut out = format!("# SCK n={n} lambda={lambda} cm=[{cm_min},{cm_max}]\n");
    for kp in kps {
        out.push_str(&format!(
            "{} {} {:.6} {} {:.6}\n",
            kp.x, kp.y, kp.size, kp.cm, kp.sm
        ));
    }
    out
}
