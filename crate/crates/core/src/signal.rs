//! Baseline-wander removal, wavelet shrinkage and beat standardization.

use log::warn;
use thiserror::Error;

use crate::wavelet::{self, WaveletError};
use crate::wfdb::EcgRecord;

/// Decomposition depth at 1000 Hz: the level-9 approximation spans about 0–0.98 Hz.
pub const DENOISE_LEVELS: usize = 9;
/// Detail levels (1-based, finest first) that are soft-thresholded.
pub const THRESHOLDED_LEVELS: usize = 2;
/// Scale factor turning a median absolute deviation into a Gaussian sigma.
const MAD_TO_SIGMA: f64 = 0.6745;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate beat: {0}")]
    DegenerateBeat(String),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Universal threshold `sigma * sqrt(2 ln n)`, sigma from the finest detail band.
pub fn universal_threshold(finest_detail: &[f64], n: usize) -> f64 {
    let mut abs: Vec<f64> = finest_detail.iter().map(|v| v.abs()).collect();
    if abs.is_empty() || n < 2 {
        return 0.0;
    }
    let sigma = median(&mut abs) / MAD_TO_SIGMA;
    sigma * (2.0 * (n as f64).ln()).sqrt()
}

/// Removes baseline wander (zeroes the deepest approximation) and soft-thresholds
/// the finest two detail bands of a raw sample series.
pub fn denoise_samples(samples: &[f64], levels: usize) -> Result<Vec<f64>, SignalError> {
    let n = samples.len();
    let admissible = wavelet::max_level(n);
    if admissible == 0 {
        return Err(SignalError::InvalidInput(format!(
            "signal of {n} samples is too short to denoise"
        )));
    }
    let levels = if levels > admissible {
        warn!("signal of {n} samples supports only {admissible} wavelet levels (wanted {levels})");
        admissible
    } else {
        levels
    };
    let mut dec = wavelet::dwt_forward(samples, levels)?;
    dec.approximation.iter_mut().for_each(|v| *v = 0.0);
    let threshold = universal_threshold(&dec.details[0], n);
    for detail in dec.details.iter_mut().take(THRESHOLDED_LEVELS) {
        detail
            .iter_mut()
            .for_each(|v| *v = soft_threshold(*v, threshold));
    }
    Ok(wavelet::dwt_inverse(&dec)?)
}

/// Wavelet denoising of a whole record at the standard depth.
pub fn denoise(record: &EcgRecord) -> Result<EcgRecord, SignalError> {
    let cleaned = denoise_samples(&record.samples, DENOISE_LEVELS)?;
    Ok(record.with_samples(cleaned))
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-score normalization using the population standard deviation.
pub fn zscore(beat: &[f64]) -> Result<Vec<f64>, SignalError> {
    if beat.len() < 2 {
        return Err(SignalError::InvalidInput(format!(
            "need at least 2 samples, got {}",
            beat.len()
        )));
    }
    let (mean, std) = mean_std(beat);
    if std <= 0.0 || !std.is_finite() || std <= mean.abs() * f64::EPSILON * 4.0 {
        return Err(SignalError::DegenerateBeat("zero standard deviation".into()));
    }
    Ok(beat.iter().map(|v| (v - mean) / std).collect())
}
