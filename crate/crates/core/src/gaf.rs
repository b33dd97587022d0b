//! Gramian angular field imaging of beats.
//!
//! A beat is block-averaged down to 128 points, min-max rescaled to [-1, 1],
//! mapped to angles with `arccos`, and expanded into a 128x128 matrix of
//! `cos(phi_i + phi_j)` (summation field) or `sin(phi_i - phi_j)` (difference
//! field). Matrix entries are quantized to 8-bit gray levels.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qrs::Beat;
use crate::wfdb::Label;

pub const IMAGE_SIZE: usize = 128;

#[derive(Debug, Error)]
pub enum GafError {
    #[error("degenerate beat: {0}")]
    DegenerateBeat(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("png error on {path}: {message}")]
    Png { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GafKind {
    #[serde(rename = "gasf")]
    Summation,
    #[serde(rename = "gadf")]
    Difference,
}

impl GafKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GafKind::Summation => "gasf",
            GafKind::Difference => "gadf",
        }
    }
}

impl fmt::Display for GafKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GafKind {
    type Err = GafError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gasf" => Ok(GafKind::Summation),
            "gadf" => Ok(GafKind::Difference),
            other => Err(GafError::InvalidInput(format!("unknown GAF kind `{other}`"))),
        }
    }
}

/// Square matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GafMatrix {
    pub size: usize,
    pub entries: Vec<f64>,
    pub kind: GafKind,
}

impl GafMatrix {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.size + col]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GafImage {
    /// Row-major 8-bit intensities, `IMAGE_SIZE * IMAGE_SIZE` of them.
    pub pixels: Vec<u8>,
    pub kind: GafKind,
    pub label: Label,
    pub record_id: String,
    pub r_peak_index: usize,
}

/// Frame boundaries `[floor(i*n/target), floor((i+1)*n/target))` of a PAA.
pub fn paa_bounds(n: usize, target: usize) -> Vec<(usize, usize)> {
    (0..target)
        .map(|i| (i * n / target, (i + 1) * n / target))
        .collect()
}

/// Piecewise aggregate approximation to `target` frame means.
pub fn paa_downsample(series: &[f64], target: usize) -> Result<Vec<f64>, GafError> {
    if target == 0 || target > series.len() {
        return Err(GafError::InvalidInput(format!(
            "cannot reduce {} samples to {target} frames",
            series.len()
        )));
    }
    Ok(paa_bounds(series.len(), target)
        .into_iter()
        .map(|(lo, hi)| series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
        .collect())
}

/// Min-max rescaling to [-1, 1]: `((x - max) + (x - min)) / (max - min)`, clamped.
pub fn minmax_rescale(beat: &[f64]) -> Result<Vec<f64>, GafError> {
    if beat.len() < 2 {
        return Err(GafError::InvalidInput(format!(
            "need at least 2 samples, got {}",
            beat.len()
        )));
    }
    let (min, max) = beat
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if max <= min || !(max - min).is_finite() {
        return Err(GafError::DegenerateBeat("max equals min".into()));
    }
    let range = max - min;
    Ok(beat
        .iter()
        .map(|&x| {
            if x == max {
                1.0
            } else if x == min {
                -1.0
            } else {
                (((x - max) + (x - min)) / range).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

/// Polar angles `arccos(x)` in [0, pi].
pub fn to_polar(normalized: &[f64]) -> Result<Vec<f64>, GafError> {
    normalized
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if (-1.0..=1.0).contains(&x) {
                Ok(x.acos())
            } else {
                Err(GafError::InvalidInput(format!(
                    "value {x} at index {i} is outside [-1, 1]"
                )))
            }
        })
        .collect()
}

/// Summation field `cos(phi_i + phi_j)`.
pub fn gasf(angles: &[f64]) -> GafMatrix {
    let n = angles.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = (angles[i] + angles[j]).cos();
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    GafMatrix {
        size: n,
        entries,
        kind: GafKind::Summation,
    }
}

/// Difference field `sin(phi_i - phi_j)` (row angle minus column angle).
pub fn gadf(angles: &[f64]) -> GafMatrix {
    let n = angles.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (angles[i] - angles[j]).sin();
            entries[i * n + j] = v;
            entries[j * n + i] = -v;
        }
    }
    GafMatrix {
        size: n,
        entries,
        kind: GafKind::Difference,
    }
}

pub fn gaf_matrix(angles: &[f64], kind: GafKind) -> GafMatrix {
    match kind {
        GafKind::Summation => gasf(angles),
        GafKind::Difference => gadf(angles),
    }
}

/// 8-bit level of a field value: round-half-up of `(v + 1) / 2 * 255`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let scaled = (v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0;
    (scaled + 0.5).floor() as u8
}

/// Full series-to-matrix path without quantization.
pub fn series_to_matrix(series: &[f64], kind: GafKind) -> Result<GafMatrix, GafError> {
    let reduced = paa_downsample(series, IMAGE_SIZE)?;
    let normalized = minmax_rescale(&reduced)?;
    let angles = to_polar(&normalized)?;
    Ok(gaf_matrix(&angles, kind))
}

pub fn encode_beat(beat: &Beat, kind: GafKind) -> Result<GafImage, GafError> {
    let matrix = series_to_matrix(&beat.samples, kind)?;
    Ok(GafImage {
        pixels: matrix.entries.iter().map(|&v| quantize(v)).collect(),
        kind,
        label: beat.label,
        record_id: beat.source_record.clone(),
        r_peak_index: beat.r_peak_index,
    })
}

/// `<record>_<rpeak>_<kind>.png`, with path separators in the record id
/// replaced by underscores.
pub fn image_file_name(record_id: &str, r_peak_index: usize, kind: GafKind) -> String {
    format!(
        "{}_{}_{}.png",
        record_id.replace(['/', '\\'], "_"),
        r_peak_index,
        kind
    )
}

pub fn write_png(path: &Path, pixels: &[u8], size: usize) -> Result<(), GafError> {
    let err = |message: String| GafError::Png {
        path: path.display().to_string(),
        message,
    };
    if pixels.len() != size * size {
        return Err(err(format!("expected {} pixels, got {}", size * size, pixels.len())));
    }
    let file = File::create(path).map_err(|e| err(e.to_string()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), size as u32, size as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| err(e.to_string()))?;
    writer.write_image_data(pixels).map_err(|e| err(e.to_string()))?;
    writer.finish().map_err(|e| err(e.to_string()))
}

/// Reads an 8-bit grayscale PNG of the given square size.
pub fn read_png(path: &Path, size: usize) -> Result<Vec<u8>, GafError> {
    let err = |message: String| GafError::Png {
        path: path.display().to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(err("not an 8-bit grayscale image".into()));
    }
    if info.width as usize != size || info.height as usize != size {
        return Err(err(format!("image is {}x{}, expected {size}x{size}", info.width, info.height)));
    }
    buf.truncate(info.buffer_size());
    Ok(buf)
}
