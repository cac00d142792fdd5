//! Repeatability and matching-score evaluation under a known homography,
//! plus the synthetic-transformation and illumination harnesses.
//!
//! Regions are discs of the key-point radius; projecting a region through
//! the homography's local affine linearization yields an ellipse, and two
//! regions correspond when their overlap error (one minus
//! intersection-over-union, measured by grid sampling) is below 0.4.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detector::{detect, DetectError, DetectorConfig, KeyPoint};
use crate::dictionary::Dictionary;
use crate::image::GrayImage;

/// Overlap error below which two regions correspond.
pub const OVERLAP_THRESHOLD: f64 = 0.4;
/// Grid resolution (per axis) for sampled region overlap.
pub const OVERLAP_RESOLUTION: usize = 400;
/// SM values agreeing within this bound count as identical detections.
pub const SM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("homography is singular (|det| <= 1e-12)")]
    SingularHomography,
    #[error("point ({x}, {y}) projects to the plane at infinity")]
    UndefinedProjection { x: f64, y: f64 },
    #[error("illumination gain must be > 0, got {0}")]
    InvalidGain(f64),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

/// 3×3 planar homography, stored row-major with `h[2][2]` normalized to 1
/// when non-zero. Must be invertible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    h: [[f64; 3]; 3],
    inv: [[f64; 3]; 3],
}

impl Homography {
    pub fn from_row_major(values: [f64; 9]) -> Result<Self, EvalError> {
        let mut h = [
            [values[0], values[1], values[2]],
            [values[3], values[4], values[5]],
            [values[6], values[7], values[8]],
        ];
        if h[2][2] != 0.0 {
            let s = h[2][2];
            for row in &mut h {
                for v in row {
                    *v /= s;
                }
            }
        }
        let det = det3(&h);
        if det.is_nan() || det.abs() <= 1e-12 {
            return Err(EvalError::SingularHomography);
        }
        let inv = inverse3(&h, det);
        Ok(Self { h, inv })
    }

    pub fn identity() -> Self {
        Self::from_row_major([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap()
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::from_row_major([1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0]).unwrap()
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.h
    }

    pub fn inverse(&self) -> Homography {
        let flat = [
            self.inv[0][0],
            self.inv[0][1],
            self.inv[0][2],
            self.inv[1][0],
            self.inv[1][1],
            self.inv[1][2],
            self.inv[2][0],
            self.inv[2][1],
            self.inv[2][2],
        ];
        Self::from_row_major(flat).expect("inverse of invertible homography is invertible")
    }

    /// Projects a point; fails when it maps to the plane at infinity.
    pub fn project(&self, x: f64, y: f64) -> Result<(f64, f64), EvalError> {
        let w = self.h[2][0] * x + self.h[2][1] * y + self.h[2][2];
        if w.abs() <= 1e-12 {
            return Err(EvalError::UndefinedProjection { x, y });
        }
        let u = self.h[0][0] * x + self.h[0][1] * y + self.h[0][2];
        let v = self.h[1][0] * x + self.h[1][1] * y + self.h[1][2];
        Ok((u / w, v / w))
    }

    /// 2×2 Jacobian of the projection at (x, y).
    pub fn jacobian(&self, x: f64, y: f64) -> Result<[[f64; 2]; 2], EvalError> {
        let w = self.h[2][0] * x + self.h[2][1] * y + self.h[2][2];
        if w.abs() <= 1e-12 {
            return Err(EvalError::UndefinedProjection { x, y });
        }
        let u = self.h[0][0] * x + self.h[0][1] * y + self.h[0][2];
        let v = self.h[1][0] * x + self.h[1][1] * y + self.h[1][2];
        let w2 = w * w;
        Ok([
            [
                (self.h[0][0] * w - u * self.h[2][0]) / w2,
                (self.h[0][1] * w - u * self.h[2][1]) / w2,
            ],
            [
                (self.h[1][0] * w - v * self.h[2][0]) / w2,
                (self.h[1][1] * w - v * self.h[2][1]) / w2,
            ],
        ])
    }
}

fn det3(h: &[[f64; 3]; 3]) -> f64 {
    h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
}

fn inverse3(h: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let c = |r: usize, s: usize| -> f64 {
        let (r1, r2) = match r {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let (s1, s2) = match s {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let minor = h[r1][s1] * h[r2][s2] - h[r1][s2] * h[r2][s1];
        if (r + s).is_multiple_of(2) {
            minor
        } else {
            -minor
        }
    };
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (s, v) in row.iter_mut().enumerate() {
            // Adjugate transpose.
            *v = c(s, r) / det;
        }
    }
    inv
}

/// Elliptical feature region `{ p : (p − c)ᵀ M (p − c) ≤ 1 }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Positive-definite quadratic form matrix M.
    pub shape: [[f64; 2]; 2],
}

impl Ellipse {
    pub fn disc(cx: f64, cy: f64, radius: f64) -> Self {
        let m = 1.0 / (radius * radius);
        Self {
            center: [cx, cy],
            shape: [[m, 0.0], [0.0, m]],
        }
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let q = self.shape[0][0] * dx * dx
            + (self.shape[0][1] + self.shape[1][0]) * dx * dy
            + self.shape[1][1] * dy * dy;
        q <= 1.0
    }

    pub fn area(&self) -> f64 {
        let det =
            self.shape[0][0] * self.shape[1][1] - self.shape[0][1] * self.shape[1][0];
        std::f64::consts::PI / det.sqrt()
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let det =
            self.shape[0][0] * self.shape[1][1] - self.shape[0][1] * self.shape[1][0];
        let half_x = (self.shape[1][1] / det).sqrt();
        let half_y = (self.shape[0][0] / det).sqrt();
        (
            [self.center[0] - half_x, self.center[1] - half_y],
            [self.center[0] + half_x, self.center[1] + half_y],
        )
    }
}

/// Maps a key-point's disc through the local affine linearization of the
/// homography at its center.
pub fn project_region(kp: &KeyPoint, h: &Homography) -> Result<Ellipse, EvalError> {
    let (cx, cy) = h.project(kp.x as f64, kp.y as f64)?;
    let j = h.jacobian(kp.x as f64, kp.y as f64)?;
    let r2 = kp.size * kp.size;
    // S = r²·J·Jᵀ maps the unit disc; the quadratic form is its inverse.
    let s = [
        [
            r2 * (j[0][0] * j[0][0] + j[0][1] * j[0][1]),
            r2 * (j[0][0] * j[1][0] + j[0][1] * j[1][1]),
        ],
        [
            r2 * (j[1][0] * j[0][0] + j[1][1] * j[0][1]),
            r2 * (j[1][0] * j[1][0] + j[1][1] * j[1][1]),
        ],
    ];
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    debug_assert!(det > 0.0, "projected region must have positive area");
    let shape = [
        [s[1][1] / det, -s[0][1] / det],
        [-s[1][0] / det, s[0][0] / det],
    ];
    Ok(Ellipse {
        center: [cx, cy],
        shape,
    })
}

/// Overlap error `1 − area(A∩B)/area(A∪B)` by uniform grid sampling over
/// the union's bounding box at the default resolution.
pub fn overlap_error(a: &Ellipse, b: &Ellipse) -> f64 {
    overlap_error_with_resolution(a, b, OVERLAP_RESOLUTION)
}

/// Overlap error at an explicit grid resolution (samples per axis).
///
/// Grid samples sit at cell centers of the union's bounding box. Within a
/// sample row the inside set of each ellipse is a contiguous index range,
/// so the row is counted in closed form rather than sample-by-sample; the
/// range ends are verified against the exact membership predicate.
pub fn overlap_error_with_resolution(a: &Ellipse, b: &Ellipse, resolution: usize) -> f64 {
    let (amin, amax) = a.bbox();
    let (bmin, bmax) = b.bbox();
    let min = [amin[0].min(bmin[0]), amin[1].min(bmin[1])];
    let max = [amax[0].max(bmax[0]), amax[1].max(bmax[1])];
    let step_x = (max[0] - min[0]) / resolution as f64;
    let step_y = (max[1] - min[1]) / resolution as f64;
    let mut in_a = 0u64;
    let mut in_b = 0u64;
    let mut in_both = 0u64;
    for iy in 0..resolution {
        let y = min[1] + (iy as f64 + 0.5) * step_y;
        let ra = row_inside_range(a, y, min[0], step_x, resolution);
        let rb = row_inside_range(b, y, min[0], step_x, resolution);
        in_a += (ra.1 - ra.0) as u64;
        in_b += (rb.1 - rb.0) as u64;
        let lo = ra.0.max(rb.0);
        let hi = ra.1.min(rb.1);
        if hi > lo {
            in_both += (hi - lo) as u64;
        }
    }
    let union = in_a + in_b - in_both;
    if union == 0 {
        return 1.0;
    }
    1.0 - in_both as f64 / union as f64
}

/// Half-open index range [lo, hi) of grid samples `x_i = min_x +
/// (i + 0.5)·step_x` inside the ellipse at sample row `y`.
fn row_inside_range(
    e: &Ellipse,
    y: f64,
    min_x: f64,
    step_x: f64,
    resolution: usize,
) -> (usize, usize) {
    // The membership form A·t² + B·dy·t + (C·dy² − 1) ≤ 0 in t = x − cx is
    // quadratic with A > 0, so the inside set is one interval.
    let qa = e.shape[0][0];
    let qb = (e.shape[0][1] + e.shape[1][0]) * (y - e.center[1]);
    let qc = e.shape[1][1] * (y - e.center[1]) * (y - e.center[1]) - 1.0;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 || step_x <= 0.0 {
        return (0, 0);
    }
    let sq = disc.sqrt();
    let x_enter = e.center[0] + (-qb - sq) / (2.0 * qa);
    let x_exit = e.center[0] + (-qb + sq) / (2.0 * qa);
    let idx_of = |x: f64| (x - min_x) / step_x - 0.5;
    let mut lo = idx_of(x_enter).ceil().max(0.0) as i64;
    let mut hi = idx_of(x_exit).floor().min(resolution as f64 - 1.0) as i64;
    let sample = |i: i64| min_x + (i as f64 + 0.5) * step_x;
    // Root rounding can be off by an ulp; settle the ends with the exact
    // predicate.
    while lo > 0 && e.contains(sample(lo - 1), y) {
        lo -= 1;
    }
    while lo <= hi && !e.contains(sample(lo), y) {
        lo += 1;
    }
    while hi < resolution as i64 - 1 && e.contains(sample(hi + 1), y) {
        hi += 1;
    }
    while hi >= lo && !e.contains(sample(hi), y) {
        hi -= 1;
    }
    if lo > hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize + 1)
    }
}

/// Evaluation outcome. `repeatability` and `matching_score` are `None`
/// (JSON `null`) when the denominator is zero and the ratios are
/// undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub correspondences: usize,
    pub repeatability: Option<f64>,
    pub correct_matches: usize,
    pub matching_score: Option<f64>,
    /// The smaller restricted region count; divisor of both ratios.
    pub denominator: usize,
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn ratio(v: Option<f64>) -> String {
            v.map_or_else(|| "undefined".to_string(), |r| format!("{r:.6}"))
        }
        writeln!(f, "correspondences: {}", self.correspondences)?;
        writeln!(f, "repeatability: {}", ratio(self.repeatability))?;
        writeln!(f, "correct_matches: {}", self.correct_matches)?;
        writeln!(f, "matching_score: {}", ratio(self.matching_score))?;
        write!(f, "denominator: {}", self.denominator)
    }
}

fn in_bounds(x: f64, y: f64, bounds: (usize, usize)) -> bool {
    if bounds.0 == 0 || bounds.1 == 0 {
        return false;
    }
    x >= 0.0 && y >= 0.0 && x <= (bounds.0 - 1) as f64 && y <= (bounds.1 - 1) as f64
}

/// Key-points visible in the common part of both images: the center must
/// lie inside its own image and its projection inside the other.
fn restrict<'a>(
    kps: &'a [KeyPoint],
    own: (usize, usize),
    other: (usize, usize),
    h: &Homography,
) -> Vec<&'a KeyPoint> {
    kps.iter()
        .filter(|kp| {
            if !in_bounds(kp.x as f64, kp.y as f64, own) {
                return false;
            }
            match h.project(kp.x as f64, kp.y as f64) {
                Ok((px, py)) => in_bounds(px, py, other),
                Err(_) => false,
            }
        })
        .collect()
}

/// Greedy one-to-one correspondences by ascending overlap error, limited
/// to pairs under the 0.4 threshold. Ties are broken on key-point
/// coordinates so the matching is independent of input list order.
fn correspondences(
    a_kps: &[&KeyPoint],
    a_regions: &[Ellipse],
    b_kps: &[&KeyPoint],
    b_regions: &[Ellipse],
) -> Vec<(usize, usize, f64)> {
    let a_boxes: Vec<_> = a_regions.iter().map(Ellipse::bbox).collect();
    let b_boxes: Vec<_> = b_regions.iter().map(Ellipse::bbox).collect();
    let a_areas: Vec<f64> = a_regions.iter().map(Ellipse::area).collect();
    let b_areas: Vec<f64> = b_regions.iter().map(Ellipse::area).collect();

    // Conservative prefilter: the intersection cannot exceed the bbox
    // intersection, so IoU >= 0.6 forces bbox∩ >= 0.6·max(area).
    let mut candidates = Vec::new();
    for i in 0..a_regions.len() {
        for j in 0..b_regions.len() {
            let ix = (a_boxes[i].1[0].min(b_boxes[j].1[0])
                - a_boxes[i].0[0].max(b_boxes[j].0[0]))
            .max(0.0);
            let iy = (a_boxes[i].1[1].min(b_boxes[j].1[1])
                - a_boxes[i].0[1].max(b_boxes[j].0[1]))
            .max(0.0);
            if ix * iy >= (1.0 - OVERLAP_THRESHOLD) * a_areas[i].max(b_areas[j]) {
                candidates.push((i, j));
            }
        }
    }

    let mut scored: Vec<(f64, usize, usize)> = candidates
        .par_iter()
        .map(|&(i, j)| (overlap_error(&a_regions[i], &b_regions[j]), i, j))
        .collect();
    scored.retain(|&(err, _, _)| err < OVERLAP_THRESHOLD);
    scored.sort_by(|p, q| {
        p.0.total_cmp(&q.0)
            .then_with(|| {
                (a_kps[p.1].y, a_kps[p.1].x).cmp(&(a_kps[q.1].y, a_kps[q.1].x))
            })
            .then_with(|| {
                (b_kps[p.2].y, b_kps[p.2].x).cmp(&(b_kps[q.2].y, b_kps[q.2].x))
            })
    });

    let mut a_used = vec![false; a_regions.len()];
    let mut b_used = vec![false; b_regions.len()];
    let mut pairs = Vec::new();
    for (err, i, j) in scored {
        if !a_used[i] && !b_used[j] {
            a_used[i] = true;
            b_used[j] = true;
            pairs.push((i, j, err));
        }
    }
    pairs
}

struct Restricted<'a> {
    a_kps: Vec<&'a KeyPoint>,
    a_regions: Vec<Ellipse>,
    b_kps: Vec<&'a KeyPoint>,
    b_regions: Vec<Ellipse>,
}

fn restrict_and_project<'a>(
    kps_a: &'a [KeyPoint],
    kps_b: &'a [KeyPoint],
    h: &Homography,
    bounds_a: (usize, usize),
    bounds_b: (usize, usize),
) -> Result<Restricted<'a>, EvalError> {
    let h_inv = h.inverse();
    let a_kps = restrict(kps_a, bounds_a, bounds_b, h);
    let b_kps = restrict(kps_b, bounds_b, bounds_a, &h_inv);
    let a_regions = a_kps
        .iter()
        .map(|kp| project_region(kp, h))
        .collect::<Result<Vec<_>, _>>()?;
    let b_regions = b_kps
        .iter()
        .map(|kp| Ellipse::disc(kp.x as f64, kp.y as f64, kp.size))
        .collect();
    Ok(Restricted {
        a_kps,
        a_regions,
        b_kps,
        b_regions,
    })
}

/// Repeatability of two detections under a known homography mapping
/// image-A coordinates to image-B coordinates. `bounds_*` are the
/// (width, height) of each image.
pub fn repeatability(
    kps_a: &[KeyPoint],
    kps_b: &[KeyPoint],
    h: &Homography,
    bounds_a: (usize, usize),
    bounds_b: (usize, usize),
) -> Result<EvalResult, EvalError> {
    let r = restrict_and_project(kps_a, kps_b, h, bounds_a, bounds_b)?;
    let denominator = r.a_kps.len().min(r.b_kps.len());
    if denominator == 0 {
        return Ok(EvalResult {
            correspondences: 0,
            repeatability: None,
            correct_matches: 0,
            matching_score: None,
            denominator: 0,
        });
    }
    let pairs = correspondences(&r.a_kps, &r.a_regions, &r.b_kps, &r.b_regions);
    Ok(EvalResult {
        correspondences: pairs.len(),
        repeatability: Some(pairs.len() as f64 / denominator as f64),
        correct_matches: 0,
        matching_score: None,
        denominator,
    })
}

/// Descriptor length: the region's bounding square resampled to 8×8.
pub const DESCRIPTOR_LEN: usize = 64;

/// Illumination-invariant patch descriptor: bilinear resample of the
/// region's bounding square to 8×8, mean-subtracted and L2-normalized.
/// Constant patches yield the zero vector.
pub fn describe(img: &GrayImage, kp: &KeyPoint) -> [f64; DESCRIPTOR_LEN] {
    let side = 2.0 * kp.size;
    let x0 = kp.x as f64 - kp.size;
    let y0 = kp.y as f64 - kp.size;
    let step = side / 8.0;
    let mut d = [0.0; DESCRIPTOR_LEN];
    for row in 0..8 {
        for col in 0..8 {
            let sx = x0 + (col as f64 + 0.5) * step;
            let sy = y0 + (row as f64 + 0.5) * step;
            d[row * 8 + col] = img.sample_bilinear_clamped(sx, sy);
        }
    }
    let mean = d.iter().sum::<f64>() / DESCRIPTOR_LEN as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-10 {
        return [0.0; DESCRIPTOR_LEN];
    }
    d.iter_mut().for_each(|v| *v /= norm);
    d
}

fn descriptor_dist2(a: &[f64; DESCRIPTOR_LEN], b: &[f64; DESCRIPTOR_LEN]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Matching score: a correspondence counts as a correct match iff its B
/// member attains the minimum descriptor distance to the A member among
/// all restricted B descriptors.
pub fn matching_score(
    kps_a: &[KeyPoint],
    kps_b: &[KeyPoint],
    h: &Homography,
    img_a: &GrayImage,
    img_b: &GrayImage,
) -> Result<EvalResult, EvalError> {
    let bounds_a = (img_a.width(), img_a.height());
    let bounds_b = (img_b.width(), img_b.height());
    let r = restrict_and_project(kps_a, kps_b, h, bounds_a, bounds_b)?;
    let denominator = r.a_kps.len().min(r.b_kps.len());
    if denominator == 0 {
        return Ok(EvalResult {
            correspondences: 0,
            repeatability: None,
            correct_matches: 0,
            matching_score: None,
            denominator: 0,
        });
    }
    let pairs = correspondences(&r.a_kps, &r.a_regions, &r.b_kps, &r.b_regions);

    let desc_a: Vec<_> = r.a_kps.iter().map(|kp| describe(img_a, kp)).collect();
    let desc_b: Vec<_> = r.b_kps.iter().map(|kp| describe(img_b, kp)).collect();
    let correct = pairs
        .iter()
        .filter(|&&(i, j, _)| {
            let d_matched = descriptor_dist2(&desc_a[i], &desc_b[j]);
            let d_min = desc_b
                .iter()
                .map(|db| descriptor_dist2(&desc_a[i], db))
                .fold(f64::INFINITY, f64::min);
            d_matched <= d_min
        })
        .count();
    Ok(EvalResult {
        correspondences: pairs.len(),
        repeatability: Some(pairs.len() as f64 / denominator as f64),
        correct_matches: correct,
        matching_score: Some(correct as f64 / denominator as f64),
        denominator,
    })
}

/// Inverse-warped image plus a validity mask for pixels whose source
/// location falls outside the input.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedImage {
    pub image: GrayImage,
    valid: Vec<bool>,
}

impl WarpedImage {
    pub fn valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.image.width() + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Warps the image through `h` (which maps source to destination
/// coordinates) by inverse mapping with bilinear interpolation. Output
/// dimensions equal input dimensions; out-of-source pixels are zero and
/// marked invalid.
pub fn warp_image(img: &GrayImage, h: &Homography) -> WarpedImage {
    let (w, ht) = (img.width(), img.height());
    let inv = h.inverse();
    let mut data = vec![0.0; w * ht];
    let mut valid = vec![false; w * ht];
    for y in 0..ht {
        for x in 0..w {
            if let Ok((sx, sy)) = inv.project(x as f64, y as f64) {
                if sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (ht - 1) as f64 {
                    data[y * w + x] = img.sample_bilinear_clamped(sx, sy);
                    valid[y * w + x] = true;
                }
            }
        }
    }
    WarpedImage {
        image: GrayImage::new(w, ht, data).expect("warp preserves finiteness"),
        valid,
    }
}

/// One difference between the base detection and the detection after an
/// affine intensity change.
#[derive(Debug, Clone, PartialEq)]
pub enum IllumMismatch {
    /// Key-point present on the base image only.
    Missing(KeyPoint),
    /// Key-point present on the transformed image only.
    Extra(KeyPoint),
    /// Same center, different complexity measure.
    CmChanged { base: KeyPoint, transformed: KeyPoint },
    /// Same center and CM, SM drifted beyond tolerance.
    SmDrift {
        base: KeyPoint,
        transformed: KeyPoint,
        delta: f64,
    },
}

impl fmt::Display for IllumMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IllumMismatch::Missing(kp) => {
                write!(f, "missing after change: ({}, {}) cm={}", kp.x, kp.y, kp.cm)
            }
            IllumMismatch::Extra(kp) => {
                write!(f, "extra after change: ({}, {}) cm={}", kp.x, kp.y, kp.cm)
            }
            IllumMismatch::CmChanged { base, transformed } => write!(
                f,
                "cm changed at ({}, {}): {} -> {}",
                base.x, base.y, base.cm, transformed.cm
            ),
            IllumMismatch::SmDrift { base, delta, .. } => write!(
                f,
                "sm drift {delta:.3e} at ({}, {})",
                base.x, base.y
            ),
        }
    }
}

/// Pass/fail report of the illumination-invariance check.
#[derive(Debug, Clone)]
pub struct IllumReport {
    pub gain: f64,
    pub offset: f64,
    pub base_count: usize,
    pub transformed_count: usize,
    pub mismatches: Vec<IllumMismatch>,
}

impl IllumReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Detects on `img` and on `a·img + b` (real-valued, unclamped) and
/// reports whether the key-point sets are identical in (x, y, cm) with SM
/// agreement within [`SM_TOLERANCE`]. Requires `a > 0`.
pub fn illumination_harness(
    img: &GrayImage,
    dict: &Dictionary,
    cfg: &DetectorConfig,
    a: f64,
    b: f64,
) -> Result<IllumReport, EvalError> {
    if a.is_nan() || a <= 0.0 {
        return Err(EvalError::InvalidGain(a));
    }
    let base = detect(img, dict, cfg)?.keypoints;
    let transformed = detect(&img.affine(a, b)?, dict, cfg)?.keypoints;

    let index = |kps: &[KeyPoint]| -> std::collections::BTreeMap<(usize, usize), KeyPoint> {
        kps.iter().map(|kp| ((kp.y, kp.x), *kp)).collect()
    };
    let base_map = index(&base);
    let trans_map = index(&transformed);

    let mut mismatches = Vec::new();
    for (center, kp) in &base_map {
        match trans_map.get(center) {
            None => mismatches.push(IllumMismatch::Missing(*kp)),
            Some(other) if other.cm != kp.cm => mismatches.push(IllumMismatch::CmChanged {
                base: *kp,
                transformed: *other,
            }),
            Some(other) => {
                let delta = (other.sm - kp.sm).abs();
                if delta > SM_TOLERANCE {
                    mismatches.push(IllumMismatch::SmDrift {
                        base: *kp,
                        transformed: *other,
                        delta,
                    });
                }
            }
        }
    }
    for (center, kp) in &trans_map {
        if !base_map.contains_key(center) {
            mismatches.push(IllumMismatch::Extra(*kp));
        }
    }
    Ok(IllumReport {
        gain: a,
        offset: b,
        base_count: base.len(),
        transformed_count: transformed.len(),
        mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::build_haar;
    use crate::synth;

    fn kp(x: usize, y: usize, size: f64) -> KeyPoint {
        KeyPoint {
            x,
            y,
            size,
            cm: 3,
            sm: 4.0,
        }
    }

    #[test]
    fn identity_projects_disc_to_itself() {
        let h = Homography::identity();
        let e = project_region(&kp(10, 12, 5.0), &h).unwrap();
        assert_eq!(e.center, [10.0, 12.0]);
        let expect = 1.0 / 25.0;
        assert!((e.shape[0][0] - expect).abs() <= 1e-12);
        assert!((e.shape[1][1] - expect).abs() <= 1e-12);
        assert!(e.shape[0][1].abs() <= 1e-12);
    }

    #[test]
    fn pure_scaling_doubles_radius() {
        let h = Homography::from_row_major([2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let e = project_region(&kp(4, 6, 3.0), &h).unwrap();
        assert_eq!(e.center, [8.0, 12.0]);
        let expect = 1.0 / 36.0; // disc of radius 6
        assert!((e.shape[0][0] - expect).abs() <= 1e-12);
        assert!((e.shape[1][1] - expect).abs() <= 1e-12);
        assert!((e.area() - std::f64::consts::PI * 36.0).abs() <= 1e-9);
    }

    #[test]
    fn rotation_preserves_radius() {
        let (s, c) = (30f64).to_radians().sin_cos();
        let h = Homography::from_row_major([c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let e = project_region(&kp(10, 0, 4.0), &h).unwrap();
        // Hand-rotated center: (10·cos30, 10·sin30).
        assert!((e.center[0] - 10.0 * c).abs() <= 1e-12);
        assert!((e.center[1] - 10.0 * s).abs() <= 1e-12);
        let expect = 1.0 / 16.0;
        assert!((e.shape[0][0] - expect).abs() <= 1e-12);
        assert!((e.shape[1][1] - expect).abs() <= 1e-12);
        assert!(e.shape[0][1].abs() <= 1e-12);
    }

    #[test]
    fn homography_normalizes_h22_to_one() {
        let h = Homography::from_row_major([2.0, 0.0, 4.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0])
            .unwrap();
        assert_eq!(h.matrix()[2][2], 1.0);
        assert_eq!(h.matrix()[0][0], 1.0);
        assert_eq!(h.matrix()[0][2], 2.0);
        let (px, py) = h.project(3.0, 5.0).unwrap();
        assert_eq!((px, py), (5.0, 5.0));
    }

    #[test]
    fn singular_homography_rejected() {
        let err = Homography::from_row_major([1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0])
            .unwrap_err();
        assert!(matches!(err, EvalError::SingularHomography));
    }

    #[test]
    fn projection_to_infinity_is_an_error() {
        // Invertible with h22 = 0: the x = 0 line maps to infinity.
        let h = Homography::from_row_major([0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0])
            .unwrap();
        let err = h.project(0.0, 5.0).unwrap_err();
        assert!(matches!(err, EvalError::UndefinedProjection { .. }));
    }

    #[test]
    fn overlap_identical_is_zero() {
        let e = Ellipse::disc(5.0, 5.0, 4.0);
        assert_eq!(overlap_error(&e, &e), 0.0);
    }

    #[test]
    fn overlap_disjoint_is_one() {
        let a = Ellipse::disc(0.0, 0.0, 2.0);
        let b = Ellipse::disc(50.0, 0.0, 2.0);
        assert_eq!(overlap_error(&a, &b), 1.0);
    }

    #[test]
    fn overlap_concentric_discs() {
        let a = Ellipse::disc(0.0, 0.0, 5.0);
        let b = Ellipse::disc(0.0, 0.0, 10.0);
        let err = overlap_error(&a, &b);
        assert!((err - 0.75).abs() <= 0.01, "{err}");
    }

    /// Pointwise grid evaluation, the direct reading of the sampling rule.
    fn overlap_error_pointwise(a: &Ellipse, b: &Ellipse, resolution: usize) -> f64 {
        let (amin, amax) = a.bbox();
        let (bmin, bmax) = b.bbox();
        let min = [amin[0].min(bmin[0]), amin[1].min(bmin[1])];
        let max = [amax[0].max(bmax[0]), amax[1].max(bmax[1])];
        let step_x = (max[0] - min[0]) / resolution as f64;
        let step_y = (max[1] - min[1]) / resolution as f64;
        let (mut in_a, mut in_b, mut in_both) = (0u64, 0u64, 0u64);
        for iy in 0..resolution {
            let y = min[1] + (iy as f64 + 0.5) * step_y;
            for ix in 0..resolution {
                let x = min[0] + (ix as f64 + 0.5) * step_x;
                let ia = a.contains(x, y);
                let ib = b.contains(x, y);
                in_a += ia as u64;
                in_b += ib as u64;
                in_both += (ia && ib) as u64;
            }
        }
        let union = in_a + in_b - in_both;
        if union == 0 {
            return 1.0;
        }
        1.0 - in_both as f64 / union as f64
    }

    #[test]
    fn row_counting_matches_pointwise_grid() {
        let mut rng = synth::SplitMix64::new(40);
        for case in 0..25 {
            let a = Ellipse::disc(rng.range(0.0, 20.0), rng.range(0.0, 20.0), rng.range(1.0, 9.0));
            // Mix discs with genuinely elliptical regions from projection.
            let h = Homography::from_row_major([
                rng.range(0.6, 1.6),
                rng.range(-0.3, 0.3),
                rng.range(-4.0, 4.0),
                rng.range(-0.3, 0.3),
                rng.range(0.6, 1.6),
                rng.range(-4.0, 4.0),
                0.0,
                0.0,
                1.0,
            ])
            .unwrap();
            let b = project_region(&kp(rng.range(0.0, 20.0) as usize, 10, 5.0), &h).unwrap();
            let fast = overlap_error_with_resolution(&a, &b, 128);
            let slow = overlap_error_pointwise(&a, &b, 128);
            assert_eq!(fast, slow, "case {case}");
        }
    }

    #[test]
    fn overlap_is_symmetric_and_bounded() {
        let mut rng = synth::SplitMix64::new(5);
        for _ in 0..40 {
            let a = Ellipse::disc(rng.range(0.0, 30.0), rng.range(0.0, 30.0), rng.range(1.0, 8.0));
            let b = Ellipse::disc(rng.range(0.0, 30.0), rng.range(0.0, 30.0), rng.range(1.0, 8.0));
            let ab = overlap_error(&a, &b);
            let ba = overlap_error(&b, &a);
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn identity_repeatability_is_exactly_one() {
        let kps: Vec<KeyPoint> = (0..7).map(|i| kp(5 + 9 * i, 10, 3.0)).collect();
        let r = repeatability(&kps, &kps, &Homography::identity(), (80, 30), (80, 30)).unwrap();
        assert_eq!(r.denominator, 7);
        assert_eq!(r.correspondences, 7);
        assert_eq!(r.repeatability, Some(1.0));
    }

    #[test]
    fn empty_side_gives_undefined_denominator() {
        let kps = vec![kp(5, 5, 3.0)];
        let r = repeatability(&kps, &[], &Homography::identity(), (20, 20), (20, 20)).unwrap();
        assert_eq!(r.denominator, 0);
        assert_eq!(r.repeatability, None);
        assert_eq!(r.matching_score, None);
    }

    #[test]
    fn half_matching_fixture_scores_half() {
        // 6 A points; B keeps 3 of them and replaces 3 with far decoys.
        let a: Vec<KeyPoint> = (0..6).map(|i| kp(10 + 12 * i, 10, 3.0)).collect();
        let mut b = a[..3].to_vec();
        b.extend((0..3).map(|i| kp(10 + 12 * i, 60, 3.0)));
        let r = repeatability(&a, &b, &Homography::identity(), (100, 80), (100, 80)).unwrap();
        assert_eq!(r.denominator, 6);
        assert_eq!(r.correspondences, 3);
        assert_eq!(r.repeatability, Some(0.5));
    }

    /// Brute-force maximum bipartite matching on the sub-0.4 pair graph.
    fn optimal_matching_size(a: &[KeyPoint], b: &[KeyPoint]) -> usize {
        let edges: Vec<Vec<usize>> = a
            .iter()
            .map(|pa| {
                let ra = Ellipse::disc(pa.x as f64, pa.y as f64, pa.size);
                b.iter()
                    .enumerate()
                    .filter(|(_, pb)| {
                        let rb = Ellipse::disc(pb.x as f64, pb.y as f64, pb.size);
                        overlap_error(&ra, &rb) < OVERLAP_THRESHOLD
                    })
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        fn augment(
            i: usize,
            edges: &[Vec<usize>],
            seen: &mut [bool],
            owner: &mut [Option<usize>],
        ) -> bool {
            for &j in &edges[i] {
                if seen[j] {
                    continue;
                }
                seen[j] = true;
                if owner[j].is_none() || augment(owner[j].unwrap(), edges, seen, owner) {
                    owner[j] = Some(i);
                    return true;
                }
            }
            false
        }
        let mut owner = vec![None; b.len()];
        let mut count = 0;
        for i in 0..a.len() {
            let mut seen = vec![false; b.len()];
            if augment(i, &edges, &mut seen, &mut owner) {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn greedy_matches_optimal_on_separated_fixtures() {
        let mut rng = synth::SplitMix64::new(91);
        for _ in 0..10 {
            // Grid sites far enough apart that candidate pairs never chain.
            let mut a = Vec::new();
            let mut b = Vec::new();
            for gy in 0..5 {
                for gx in 0..5 {
                    let cx = 15.0 + 22.0 * gx as f64;
                    let cy = 15.0 + 22.0 * gy as f64;
                    if rng.next_f64() < 0.7 {
                        a.push(kp(
                            (cx + rng.range(-1.0, 1.0)) as usize,
                            (cy + rng.range(-1.0, 1.0)) as usize,
                            4.0,
                        ));
                    }
                    if rng.next_f64() < 0.7 {
                        b.push(kp(
                            (cx + rng.range(-1.0, 1.0)) as usize,
                            (cy + rng.range(-1.0, 1.0)) as usize,
                            4.0,
                        ));
                    }
                }
            }
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let r = repeatability(&a, &b, &Homography::identity(), (140, 140), (140, 140))
                .unwrap();
            assert_eq!(r.correspondences, optimal_matching_size(&a, &b));
        }
    }

    #[test]
    fn metrics_invariant_to_list_order() {
        let mut rng = synth::SplitMix64::new(17);
        let img = synth::textured_image(90, 90, 3);
        let a: Vec<KeyPoint> = (0..20)
            .map(|_| {
                kp(
                    rng.range(8.0, 80.0) as usize,
                    rng.range(8.0, 80.0) as usize,
                    4.0,
                )
            })
            .collect();
        let b: Vec<KeyPoint> = (0..20)
            .map(|_| {
                kp(
                    rng.range(8.0, 80.0) as usize,
                    rng.range(8.0, 80.0) as usize,
                    4.0,
                )
            })
            .collect();
        let h = Homography::identity();
        let fwd = matching_score(&a, &b, &h, &img, &img).unwrap();
        let mut a_rev = a.clone();
        a_rev.reverse();
        let mut b_rev = b.clone();
        b_rev.reverse();
        let rev = matching_score(&a_rev, &b_rev, &h, &img, &img).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn descriptor_constant_patch_is_zero() {
        let img = GrayImage::new(20, 20, vec![9.0; 400]).unwrap();
        let d = describe(&img, &kp(10, 10, 4.0));
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn descriptor_is_affine_invariant_and_unit_norm() {
        let img = synth::textured_image(30, 30, 8);
        let mapped = img.affine(3.0, 5.0).unwrap();
        let p = kp(15, 14, 5.0);
        let d1 = describe(&img, &p);
        let d2 = describe(&mapped, &p);
        for (u, v) in d1.iter().zip(&d2) {
            assert!((u - v).abs() <= 1e-9);
        }
        let norm: f64 = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn matching_score_identity_is_one() {
        let img = synth::textured_image(80, 80, 12);
        let kps: Vec<KeyPoint> = (0..5)
            .flat_map(|i| (0..5).map(move |j| kp(12 + 12 * i, 12 + 12 * j, 4.0)))
            .collect();
        let r = matching_score(&kps, &kps, &Homography::identity(), &img, &img).unwrap();
        assert_eq!(r.matching_score, Some(1.0));
        assert_eq!(r.repeatability, Some(1.0));
    }

    #[test]
    fn matching_score_decoy_fixture_is_zero() {
        // Two images whose patch contents are swapped between the two
        // key-point locations: correspondences exist (identity geometry)
        // but each descriptor's nearest neighbor is the other point.
        let mut img_a = GrayImage::zeros(60, 30);
        let mut img_b = GrayImage::zeros(60, 30);
        // Stripe phase is taken relative to the window so the two windows
        // carry bit-identical patterns.
        let paint = |img: &mut GrayImage, cx: usize, horizontal: bool| {
            for y in 0..30 {
                for x in (cx - 8)..(cx + 8) {
                    let v = if horizontal {
                        ((y / 2) % 2) as f64 * 200.0
                    } else {
                        (((x + 8 - cx) / 2) % 2) as f64 * 200.0
                    };
                    img.set(x, y, v);
                }
            }
        };
        paint(&mut img_a, 15, true);
        paint(&mut img_a, 45, false);
        paint(&mut img_b, 15, false); // swapped content
        paint(&mut img_b, 45, true);
        let kps = vec![kp(15, 15, 4.0), kp(45, 15, 4.0)];
        let r = matching_score(&kps, &kps, &Homography::identity(), &img_a, &img_b).unwrap();
        assert_eq!(r.correspondences, 2);
        assert_eq!(r.correct_matches, 0);
        assert_eq!(r.matching_score, Some(0.0));
        assert!(r.matching_score <= r.repeatability);
    }

    #[test]
    fn warp_identity_is_exact() {
        let img = synth::textured_image(17, 13, 2);
        let w = warp_image(&img, &Homography::identity());
        assert_eq!(w.image, img);
        assert_eq!(w.valid_count(), 17 * 13);
    }

    #[test]
    fn warp_integer_translation_is_bit_exact() {
        let img = synth::textured_image(20, 16, 6);
        let w = warp_image(&img, &Homography::translation(4.0, 3.0));
        for y in 0..16 {
            for x in 0..20 {
                if x >= 4 && y >= 3 {
                    assert!(w.valid(x, y));
                    assert_eq!(w.image.get(x, y), img.get(x - 4, y - 3));
                } else {
                    assert!(!w.valid(x, y));
                    assert_eq!(w.image.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn warp_quarter_rotation_matches_hand_oracle() {
        // Rotation by 90° about the center of a 3×3 image: (x, y) -> (2−y, x).
        let img = GrayImage::new(3, 3, (1..=9).map(|v| v as f64).collect()).unwrap();
        let h = Homography::from_row_major([0.0, -1.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let w = warp_image(&img, &h);
        for y in 0..3i64 {
            for x in 0..3i64 {
                // Destination (x, y) pulls from source H⁻¹(x, y) = (y, 2−x).
                let expect = img.get(y as usize, (2 - x) as usize);
                assert_eq!(w.image.get(x as usize, y as usize), expect);
            }
        }
    }

    #[test]
    fn illumination_harness_passes_on_affine_grid() {
        let dict = build_haar(5, 2).unwrap();
        let cfg = DetectorConfig {
            n: 5,
            cm_min: 2,
            ..DetectorConfig::default()
        };
        let img = synth::smooth_image(28, 28, 31);
        for (a, b) in [(1.0, 0.0), (2.0, 10.0), (0.5, -30.0)] {
            let report = illumination_harness(&img, &dict, &cfg, a, b).unwrap();
            assert!(
                report.passed(),
                "a={a} b={b}: {:?}",
                report.mismatches
            );
            assert!(report.base_count > 0);
        }
    }

    #[test]
    fn illumination_harness_rejects_nonpositive_gain() {
        let dict = build_haar(5, 2).unwrap();
        let cfg = DetectorConfig {
            n: 5,
            ..DetectorConfig::default()
        };
        let img = synth::smooth_image(16, 16, 1);
        let err = illumination_harness(&img, &dict, &cfg, -1.0, 0.0).unwrap_err();
        assert!(matches!(err, EvalError::InvalidGain(_)));
    }

    #[test]
    fn eval_result_json_has_fixed_keys() {
        let r = EvalResult {
            correspondences: 3,
            repeatability: Some(0.75),
            correct_matches: 2,
            matching_score: Some(0.5),
            denominator: 4,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            "{\"correspondences\":3,\"repeatability\":0.75,\"correct_matches\":2,\"matching_score\":0.5,\"denominator\":4}"
        );
        let undefined = EvalResult {
            correspondences: 0,
            repeatability: None,
            correct_matches: 0,
            matching_score: None,
            denominator: 0,
        };
        assert!(serde_json::to_string(&undefined)
            .unwrap()
            .contains("\"repeatability\":null"));
    }

    #[test]
    fn eval_result_line_oriented_text() {
        let r = EvalResult {
            correspondences: 3,
            repeatability: Some(0.75),
            correct_matches: 2,
            matching_score: None,
            denominator: 4,
        };
        let text = r.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            vec![
                "correspondences: 3",
                "repeatability: 0.750000",
                "correct_matches: 2",
                "matching_score: undefined",
                "denominator: 4",
            ]
        );
    }

    #[test]
    fn illumination_harness_reports_overflowing_gain() {
        let dict = build_haar(5, 2).unwrap();
        let cfg = DetectorConfig {
            n: 5,
            ..DetectorConfig::default()
        };
        let img = synth::smooth_image(16, 16, 2);
        let err = illumination_harness(&img, &dict, &cfg, f64::MAX, 0.0).unwrap_err();
        assert!(matches!(err, EvalError::Image(_)), "{err}");
    }
}
