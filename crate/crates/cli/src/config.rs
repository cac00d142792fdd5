//! Config-file parsing and flag/file/default layering.
//!
//! The config file is one `key = value` per line with `#` comments; keys
//! use the same spelling as the command-line flags. Flags override file
//! values, which override the built-in defaults. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sck_core::detector::DetectorConfig;

use crate::DetectorFlags;

/// Values read from a config file; every field optional.
#[derive(Debug, Default, Clone)]
pub struct FileValues {
    pub n: Option<usize>,
    pub lambda: Option<f64>,
    pub cm_min: Option<usize>,
    pub cm_max: Option<usize>,
    pub nms: Option<usize>,
    pub topk: Option<usize>,
    pub sigma: Option<f64>,
    pub gsize: Option<usize>,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub stride: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub overlay: Option<PathBuf>,
}

fn parse_value<T: FromStr>(key: &str, value: &str, lineno: usize) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("config line {lineno}: invalid value for `{key}`: {value}"))
}

pub fn parse_config_file(path: &Path) -> Result<FileValues, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut v = FileValues::default();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("config line {lineno}: expected `key = value`"));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "n" => v.n = Some(parse_value(key, value, lineno)?),
            "lambda" => v.lambda = Some(parse_value(key, value, lineno)?),
            "cm-min" => v.cm_min = Some(parse_value(key, value, lineno)?),
            "cm-max" => v.cm_max = Some(parse_value(key, value, lineno)?),
            "nms" => v.nms = Some(parse_value(key, value, lineno)?),
            "topk" => v.topk = Some(parse_value(key, value, lineno)?),
            "sigma" => v.sigma = Some(parse_value(key, value, lineno)?),
            "gsize" => v.gsize = Some(parse_value(key, value, lineno)?),
            "a1" => v.a1 = Some(parse_value(key, value, lineno)?),
            "a2" => v.a2 = Some(parse_value(key, value, lineno)?),
            "stride" => v.stride = Some(parse_value(key, value, lineno)?),
            "threads" => v.threads = Some(parse_value(key, value, lineno)?),
            "out" => v.out = Some(PathBuf::from(value)),
            "overlay" => v.overlay = Some(PathBuf::from(value)),
            other => return Err(format!("config line {lineno}: unknown key `{other}`")),
        }
    }
    Ok(v)
}

/// Fully layered run configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub detector: DetectorConfig,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub overlay: Option<PathBuf>,
}

/// Layers flag values over file values over defaults.
pub fn resolve(flags: &DetectorFlags, file: FileValues) -> Resolved {
    let d = DetectorConfig::default();
    let detector = DetectorConfig {
        n: flags.n.or(file.n).unwrap_or(d.n),
        lambda: flags.lambda.or(file.lambda).unwrap_or(d.lambda),
        cm_min: flags.cm_min.or(file.cm_min).unwrap_or(d.cm_min),
        cm_max: flags.cm_max.or(file.cm_max).or(d.cm_max),
        nms_window: flags.nms.or(file.nms).unwrap_or(d.nms_window),
        max_keypoints: flags.topk.or(file.topk).unwrap_or(d.max_keypoints),
        gauss_sigma: flags.sigma.or(file.sigma).unwrap_or(d.gauss_sigma),
        gauss_size: flags.gsize.or(file.gsize).unwrap_or(d.gauss_size),
        a1: flags.a1.or(file.a1).unwrap_or(d.a1),
        a2: flags.a2.or(file.a2).unwrap_or(d.a2),
        stride: flags.stride.or(file.stride).unwrap_or(d.stride),
    };
    Resolved {
        detector,
        threads: flags.threads.or(file.threads),
        out: file.out,
        overlay: file.overlay,
    }
}
