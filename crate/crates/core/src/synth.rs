//! Deterministic synthetic test images.
//!
//! Everything here is seeded, so any two runs (and any two machines)
//! produce bit-identical inputs for the test and benchmark harnesses.

use crate::image::GrayImage;

/// Tiny deterministic PRNG (SplitMix64) so synthetic inputs do not depend
/// on external crates or their version-to-version stream changes.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Smooth random image: a sum of low-frequency cosine waves mapped into
/// [40, 215]. Smooth enough that sparse codes stay generic under affine
/// intensity changes.
pub fn smooth_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = SplitMix64::new(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.range(0.02, 0.12),  // x frequency
                rng.range(0.02, 0.12),  // y frequency
                rng.range(0.0, std::f64::consts::TAU), // phase
                rng.range(0.4, 1.0),    // amplitude
            )
        })
        .collect();
    let total_amp: f64 = waves.iter().map(|w| w.3).sum();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut v = 0.0;
            for &(fx, fy, phase, amp) in &waves {
                v += amp * (fx * x as f64 + fy * y as f64 + phase).cos();
            }
            data.push(127.5 + 87.5 * v / total_amp);
        }
    }
    GrayImage::new(width, height, data).expect("finite synthesis")
}

/// Textured random image: the smooth base plus medium-frequency waves and
/// pixel noise, so blocks span a wide complexity range.
pub fn textured_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let base = smooth_image(width, height, seed);
    let mut rng = SplitMix64::new(seed ^ 0xdead_beef);
    let waves: Vec<(f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            (
                rng.range(0.2, 1.2),
                rng.range(0.2, 1.2),
                rng.range(0.0, std::f64::consts::TAU),
                rng.range(4.0, 14.0),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut v = base.get(x, y);
            for &(fx, fy, phase, amp) in &waves {
                v += amp * (fx * x as f64 + fy * y as f64 + phase).cos();
            }
            v += rng.range(-6.0, 6.0);
            data.push(v);
        }
    }
    GrayImage::new(width, height, data).expect("finite synthesis")
}

/// Shifts image content by integer (dx, dy); pixels whose source falls
/// outside the image replicate the nearest source pixel. Output size
/// equals input size.
pub fn shift_replicate(img: &GrayImage, dx: i64, dy: i64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let sx = (x - dx).clamp(0, w as i64 - 1) as usize;
            let sy = (y - dy).clamp(0, h as i64 - 1) as usize;
            data.push(img.get(sx, sy));
        }
    }
    GrayImage::new(w, h, data).expect("finite shift")
}
