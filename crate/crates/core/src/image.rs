//! Grayscale image container and file I/O (PGM P2/P5, PPM P6, PNG).
//!
//! Intensities are stored as `f64` and are *not* clamped to 8 bits: the
//! illumination tests apply `a·I + b` and expect the affine change to
//! survive untouched. The nominal range is `[0, 255]`; writers clamp and
//! round on the way out.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::detector::KeyPoint;

/// Errors from image loading, decoding and writing.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unreadable file {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("invalid image data: {0}")]
    InvalidData(String),
    #[error("key-point center ({x}, {y}) outside {width}x{height} image")]
    KeyPointOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("write failed for {path}: {source}")]
    WriteFailed {
        path: String,
        source: std::io::Error,
    },
    #[error("png encode failed: {0}")]
    PngEncode(String),
}

/// Row-major grayscale image with real-valued intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major data. Dimensions must be at least 1
    /// and every intensity finite.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidData(format!(
                "dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(ImageError::InvalidData(format!(
                "data length {} != {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(ImageError::InvalidData(format!("non-finite intensity {v}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Zero-filled image.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height]).expect("non-zero dimensions")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Per-pixel affine intensity change `a·I + b`, unclamped. Fails when
    /// the transform overflows to non-finite intensities.
    pub fn affine(&self, a: f64, b: f64) -> Result<GrayImage, ImageError> {
        let data = self.data.iter().map(|&v| a * v + b).collect();
        GrayImage::new(self.width, self.height, data)
    }

    /// Copies the n×n block whose top-left corner is (x0, y0) into `out`
    /// in row-major order. The block must lie fully inside the image.
    pub fn copy_block(&self, x0: usize, y0: usize, n: usize, out: &mut [f64]) {
        debug_assert!(x0 + n <= self.width && y0 + n <= self.height);
        debug_assert_eq!(out.len(), n * n);
        for r in 0..n {
            let src = (y0 + r) * self.width + x0;
            out[r * n..(r + 1) * n].copy_from_slice(&self.data[src..src + n]);
        }
    }

    /// Bilinear sample with edge replication; coordinates are clamped to
    /// the image rectangle before interpolation.
    pub fn sample_bilinear_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        (1.0 - fx) * (1.0 - fy) * p00
            + fx * (1.0 - fy) * p10
            + (1.0 - fx) * fy * p01
            + fx * fy * p11
    }
}

impl fmt::Display for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage {}x{}", self.width, self.height)
    }
}

/// BT.601 luma weights used when collapsing RGB inputs to grayscale.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

#[inline]
fn luma(r: u8, g: u8, b: u8) -> f64 {
    LUMA_R * r as f64 + LUMA_G * g as f64 + LUMA_B * b as f64
}

/// Loads a grayscale image. The format is sniffed from the file's magic
/// bytes: PGM (P2 ascii / P5 binary, 8-bit), PPM (P6, collapsed to luma)
/// or PNG (8-bit grayscale or 8-bit RGB, RGB collapsed to luma).
pub fn load_image(path: &Path) -> Result<GrayImage, ImageError> {
    let bytes = fs::read(path).map_err(|source| ImageError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    decode_image(&bytes)
}

/// Decodes an in-memory image buffer; see [`load_image`].
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    const PNG_MAGIC: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    match bytes {
        [b'P', b'2', ..] | [b'P', b'5', ..] | [b'P', b'6', ..] => decode_pnm(bytes),
        _ if bytes.starts_with(&PNG_MAGIC) => decode_png(bytes),
        _ => Err(ImageError::UnsupportedFormat(
            "expected PGM (P2/P5), PPM (P6) or PNG magic".into(),
        )),
    }
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ImageError::MalformedPayload(format!("png: {e}")))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data: Vec<f64> = match dynimg {
        image::DynamicImage::ImageLuma8(img) => img.into_raw().iter().map(|&v| v as f64).collect(),
        image::DynamicImage::ImageRgb8(img) => img
            .pixels()
            .map(|p| luma(p.0[0], p.0[1], p.0[2]))
            .collect(),
        other => {
            return Err(ImageError::UnsupportedBitDepth(format!(
                "png color type {:?}, expected 8-bit grayscale or 8-bit RGB",
                other.color()
            )))
        }
    };
    GrayImage::new(w, h, data)
}

/// Whitespace/comment-aware token scanner for PNM headers.
struct PnmScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmScanner<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<u32, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ImageError::MalformedHeader(format!(
                "expected unsigned integer for {what}"
            )));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are utf8");
        tok.parse::<u32>()
            .map_err(|_| ImageError::MalformedHeader(format!("{what} out of range: {tok}")))
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let magic = &bytes[..2];
    let mut scan = PnmScanner::new(bytes, 2);
    let width = scan.next_uint("width")? as usize;
    let height = scan.next_uint("height")? as usize;
    let maxval = scan.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedBitDepth(format!(
            "maxval {maxval}, only 8-bit (maxval 1..=255) supported"
        )));
    }
    let channels = if magic == b"P6" { 3 } else { 1 };
    let expected = width * height * channels;

    let samples: Vec<u32> = match magic {
        b"P2" => {
            let mut vals = Vec::with_capacity(expected);
            for i in 0..expected {
                vals.push(scan.next_uint("pixel value").map_err(|_| {
                    ImageError::MalformedPayload(format!(
                        "truncated P2 payload: got {i} of {expected} values"
                    ))
                })?);
            }
            vals
        }
        b"P5" | b"P6" => {
            // Exactly one whitespace byte separates the header from raster data.
            if scan.pos >= bytes.len() || !bytes[scan.pos].is_ascii_whitespace() {
                return Err(ImageError::MalformedHeader(
                    "missing whitespace after maxval".into(),
                ));
            }
            let start = scan.pos + 1;
            let raster = &bytes[start.min(bytes.len())..];
            if raster.len() < expected {
                return Err(ImageError::MalformedPayload(format!(
                    "truncated binary payload: got {} of {expected} bytes",
                    raster.len()
                )));
            }
            raster[..expected].iter().map(|&b| b as u32).collect()
        }
        _ => unreachable!("dispatch checked the magic"),
    };

    if let Some(v) = samples.iter().find(|&&v| v > maxval) {
        return Err(ImageError::MalformedPayload(format!(
            "sample {v} exceeds maxval {maxval}"
        )));
    }
    let data: Vec<f64> = if channels == 1 {
        samples.iter().map(|&v| v as f64).collect()
    } else {
        samples
            .chunks_exact(3)
            .map(|p| luma(p[0] as u8, p[1] as u8, p[2] as u8))
            .collect()
    };
    GrayImage::new(width, height, data)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// Writes a grayscale image; format chosen by extension (`.pgm` → binary
/// P5, `.png` → 8-bit grayscale PNG). Intensities are clamped to [0, 255]
/// and rounded, so integer-valued in-range images round-trip bit-exactly
/// through P5.
pub fn write_image(img: &GrayImage, path: &Path) -> Result<(), ImageError> {
    match extension(path) {
        Some("pgm") => {
            let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend(img.data.iter().map(|&v| to_u8(v)));
            write_bytes(path, &out)
        }
        Some("png") => {
            let buf: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
            let gray =
                image::GrayImage::from_raw(img.width as u32, img.height as u32, buf).unwrap();
            gray.save(path)
                .map_err(|e| ImageError::PngEncode(e.to_string()))
        }
        other => Err(ImageError::UnsupportedFormat(format!(
            "cannot write grayscale extension {other:?}, use .pgm or .png"
        ))),
    }
}

/// Overlay circle color, fixed.
const OVERLAY_COLOR: [u8; 3] = [0, 255, 0];

/// Renders the grayscale image to RGB and draws one circle per key-point
/// (midpoint rasterization, radius = rounded key-point size, color fixed
/// green). Format by extension: `.ppm` → binary P6, `.png` → RGB PNG.
/// Fails if any key-point center lies outside the image.
pub fn write_overlay(img: &GrayImage, kps: &[KeyPoint], path: &Path) -> Result<(), ImageError> {
    for kp in kps {
        if kp.x >= img.width || kp.y >= img.height {
            return Err(ImageError::KeyPointOutOfBounds {
                x: kp.x,
                y: kp.y,
                width: img.width,
                height: img.height,
            });
        }
    }
    let mut rgb = vec![0u8; img.width * img.height * 3];
    for (px, &v) in rgb.chunks_exact_mut(3).zip(&img.data) {
        let g = to_u8(v);
        px.copy_from_slice(&[g, g, g]);
    }
    for kp in kps {
        draw_circle(
            &mut rgb,
            img.width,
            img.height,
            kp.x as i64,
            kp.y as i64,
            kp.size.round() as i64,
        );
    }
    match extension(path) {
        Some("ppm") => {
            let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend_from_slice(&rgb);
            write_bytes(path, &out)
        }
        Some("png") => {
            let rgbimg =
                image::RgbImage::from_raw(img.width as u32, img.height as u32, rgb).unwrap();
            rgbimg
                .save(path)
                .map_err(|e| ImageError::PngEncode(e.to_string()))
        }
        other => Err(ImageError::UnsupportedFormat(format!(
            "cannot write overlay extension {other:?}, use .ppm or .png"
        ))),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ImageError> {
    let mut f = fs::File::create(path).map_err(|source| ImageError::WriteFailed {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| ImageError::WriteFailed {
        path: path.display().to_string(),
        source,
    })
}

/// Midpoint circle rasterization, clipped to the image rectangle.
fn draw_circle(rgb: &mut [u8], width: usize, height: usize, cx: i64, cy: i64, radius: i64) {
    let mut plot = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let i = (y as usize * width + x as usize) * 3;
            rgb[i..i + 3].copy_from_slice(&OVERLAY_COLOR);
        }
    };
    if radius <= 0 {
        plot(cx, cy);
        return;
    }
    let mut x = 0i64;
    let mut y = radius;
    let mut d = 1 - radius;
    while x <= y {
        plot(cx + x, cy + y);
        plot(cx - x, cy + y);
        plot(cx + x, cy - y);
        plot(cx - x, cy - y);
        plot(cx + y, cy + x);
        plot(cx - y, cy + x);
        plot(cx + y, cy - x);
        plot(cx - y, cy - x);
        if d < 0 {
            d += 2 * x + 3;
        } else {
            d += 2 * (x - y) + 5;
            y -= 1;
        }
        x += 1;
    }
}
