//! Sparse-coding key-point detection.
//!
//! A key-point here is the center of an image block whose sparse
//! representation over a Haar dictionary needs "enough but not too many"
//! atoms. The pipeline stages are:
//!
//! 1. **Pre-filter** – small separable Gaussian to remove noise and tiny
//!    structures ([`detector::gaussian_filter`]).
//! 2. **Block coding** – every fully interior `n`×`n` block is reshaped,
//!    mean-centered, normalized to unit amplitude and sparse-coded by
//!    coordinate-descent LASSO ([`lasso::solve_lasso`]).
//! 3. **Complexity gate** – blocks whose code has a number of non-zero
//!    coefficients (the complexity measure, CM) inside a configured range
//!    become key-point candidates.
//! 4. **Strength + suppression** – candidates are ranked by the strength
//!    measure SM = a1·‖α‖₀ + a2·‖α‖₁, thinned by non-maxima suppression
//!    and cut to the top K ([`detector::detect`]).
//!
//! Because every block is mean-centered and normalized before coding, the
//! detector is invariant to per-pixel affine intensity changes I → a·I + b
//! (a > 0): centers, CM and SM are unchanged. [`eval::illumination_harness`]
//! checks this property end to end, and [`eval`] also provides the standard
//! repeatability / matching-score benchmark under a known homography.

pub mod detector;
pub mod dictionary;
pub mod eval;
pub mod image;
pub mod lasso;
pub mod synth;

pub use crate::detector::{detect, nms, DetectResult, DetectorConfig, KeyPoint};
pub use crate::dictionary::Dictionary;
pub use crate::eval::{EvalResult, Homography};
pub use crate::image::GrayImage;
pub use crate::lasso::{solve_lasso, SolverParams, SparseCode};
