//! Pan-Tompkins R-peak detection at 1000 Hz and fixed-window beat extraction.
//!
//! The detector runs offline over a whole record. Every filter stage is causal,
//! so the stages are evaluated in sequence and the accumulated group delay is
//! removed once at the end. Filter lengths are the classic 200 Hz design scaled
//! by five.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{self, SignalError};
use crate::wfdb::{EcgRecord, Label};

pub const SUPPORTED_RATE: f64 = 1000.0;
/// Samples kept before the R peak.
pub const PRE_R: usize = 250;
/// Samples kept after the R peak.
pub const POST_R: usize = 400;
pub const BEAT_LEN: usize = PRE_R + 1 + POST_R;

const LOWPASS_LEN: usize = 30;
const HIGHPASS_LEN: usize = 160;
const HIGHPASS_DELAY: usize = 80;
const DERIV_STEP: usize = 5;
const INTEGRATION_LEN: usize = 150;
/// Group delay of low-pass, high-pass, derivative and integrator together.
const PIPELINE_DELAY: usize = (LOWPASS_LEN - 1) + HIGHPASS_DELAY + 2 * DERIV_STEP + INTEGRATION_LEN / 2;

const REFRACTORY: usize = 200;
const T_WAVE_WINDOW: usize = 360;
const SLOPE_WINDOW: usize = 75;
const REFINE_RADIUS: usize = 50;
const INIT_WINDOW: usize = 2000;
const SEARCHBACK_FACTOR: f64 = 1.66;
/// Samples of constant extension in front of the record to settle the filters.
const WARMUP: usize = 2 * HIGHPASS_LEN;

#[derive(Debug, Error, PartialEq)]
pub enum QrsError {
    #[error("unsupported sampling rate {0} Hz (only 1000 Hz)")]
    UnsupportedRate(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RPeakList {
    pub indices: Vec<usize>,
    pub sampling_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beat {
    /// Exactly `BEAT_LEN` z-scored samples, R peak at `PRE_R`.
    pub samples: Vec<f64>,
    pub source_record: String,
    pub subject_id: String,
    pub r_peak_index: usize,
    pub label: Label,
}

/// Intermediate Pan-Tompkins signals, aligned with the input.
#[derive(Debug, Clone)]
pub struct DetectorTrace {
    pub bandpassed: Vec<f64>,
    pub integrated: Vec<f64>,
}

fn moving_sum(x: &[f64], len: usize) -> Vec<f64> {
    // Direct summation keeps the result independent of record length.
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let lo = (i + 1).saturating_sub(len);
        *slot = x[lo..=i].iter().sum();
    }
    out
}

fn filter_chain(samples: &[f64]) -> DetectorTrace {
    let first = samples[0];
    let mut x = Vec::with_capacity(samples.len() + WARMUP);
    x.extend(std::iter::repeat_n(first, WARMUP));
    x.extend_from_slice(samples);
    let n = x.len();

    // Low-pass: (1 - z^-30)^2 / (1 - z^-1)^2, i.e. two 30-sample moving sums.
    let lp = moving_sum(&moving_sum(&x, LOWPASS_LEN), LOWPASS_LEN);
    // High-pass: delayed input minus a 160-sample moving average.
    let ma = moving_sum(&lp, HIGHPASS_LEN);
    let hp: Vec<f64> = (0..n)
        .map(|i| {
            let delayed = if i >= HIGHPASS_DELAY { lp[i - HIGHPASS_DELAY] } else { lp[0] };
            delayed - ma[i] / HIGHPASS_LEN as f64
        })
        .collect();
    // Five-point derivative with taps spread to 1000 Hz.
    let at = |i: usize, back: usize| if i >= back { hp[i - back] } else { hp[0] };
    let deriv: Vec<f64> = (0..n)
        .map(|i| {
            (2.0 * at(i, 0) + at(i, DERIV_STEP) - at(i, 3 * DERIV_STEP) - 2.0 * at(i, 4 * DERIV_STEP))
                / 8.0
        })
        .collect();
    let squared: Vec<f64> = deriv.iter().map(|d| d * d).collect();
    let mwi: Vec<f64> = moving_sum(&squared, INTEGRATION_LEN)
        .into_iter()
        .map(|v| v / INTEGRATION_LEN as f64)
        .collect();

    let bp_delay = (LOWPASS_LEN - 1) + HIGHPASS_DELAY;
    let align = |v: &[f64], delay: usize| -> Vec<f64> {
        (0..samples.len())
            .map(|i| v.get(WARMUP + i + delay).copied().unwrap_or(0.0))
            .collect()
    };
    DetectorTrace {
        bandpassed: align(&hp, bp_delay),
        integrated: align(&mwi, PIPELINE_DELAY),
    }
}

/// Indices that are the maximum of `x` within `radius` samples on both sides
/// (first index wins on ties), and strictly positive.
fn windowed_maxima(x: &[f64], radius: usize) -> Vec<usize> {
    let n = x.len();
    let mut out = Vec::new();
    let mut deque: VecDeque<usize> = VecDeque::new();
    // Sliding max over [i - radius, i + radius]; the deque keeps candidate
    // indices with non-increasing values, earliest first.
    let mut next = 0;
    for i in 0..n {
        let hi = (i + radius).min(n - 1);
        while next <= hi {
            while deque.back().is_some_and(|&b| x[b] < x[next]) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        while deque.front().is_some_and(|&f| f + radius < i) {
            deque.pop_front();
        }
        if let Some(&f) = deque.front() {
            if f == i && x[i] > 0.0 {
                out.push(i);
            }
        }
    }
    out
}

fn max_abs_slope(bp: &[f64], center: usize) -> f64 {
    let lo = center.saturating_sub(SLOPE_WINDOW).max(1);
    let hi = (center + SLOPE_WINDOW).min(bp.len() - 1);
    (lo..=hi)
        .map(|i| (bp[i] - bp[i - 1]).abs())
        .fold(0.0, f64::max)
}

struct Thresholds {
    spki: f64,
    npki: f64,
}

impl Thresholds {
    fn primary(&self) -> f64 {
        self.npki + 0.25 * (self.spki - self.npki)
    }

    fn secondary(&self) -> f64 {
        0.5 * self.primary()
    }
}

fn detect_on_trace(trace: &DetectorTrace) -> Vec<usize> {
    let mwi = &trace.integrated;
    let n = mwi.len();
    let init = &mwi[..INIT_WINDOW.min(n)];
    let init_max = init.iter().copied().fold(0.0, f64::max);
    if init_max <= 0.0 && mwi.iter().all(|&v| v <= 0.0) {
        return Vec::new();
    }
    let mut th = Thresholds {
        spki: init_max / 3.0,
        npki: init.iter().sum::<f64>() / init.len() as f64 / 2.0,
    };

    let candidates = windowed_maxima(mwi, REFRACTORY / 2);
    let mut qrs: Vec<usize> = Vec::new();
    let mut qrs_slopes: Vec<f64> = Vec::new();
    let mut rr_history: VecDeque<usize> = VecDeque::new();
    // Noise-classified candidates since the last QRS, for search-back.
    let mut pending_noise: Vec<usize> = Vec::new();

    let rr_average = |h: &VecDeque<usize>| -> f64 {
        if h.is_empty() {
            SUPPORTED_RATE
        } else {
            h.iter().sum::<usize>() as f64 / h.len() as f64
        }
    };

    let accept = |idx: usize,
                      slope: f64,
                      qrs: &mut Vec<usize>,
                      qrs_slopes: &mut Vec<f64>,
                      rr: &mut VecDeque<usize>| {
        if let Some(&last) = qrs.last() {
            rr.push_back(idx - last);
            if rr.len() > 8 {
                rr.pop_front();
            }
        }
        qrs.push(idx);
        qrs_slopes.push(slope);
    };

    for &c in &candidates {
        // Search-back over the gap before this candidate.
        if let Some(&last) = qrs.last() {
            if (c - last) as f64 > SEARCHBACK_FACTOR * rr_average(&rr_history) {
                let best = pending_noise
                    .iter()
                    .copied()
                    .filter(|&p| p >= last + REFRACTORY && p < c && mwi[p] > th.secondary())
                    .max_by(|&a, &b| mwi[a].total_cmp(&mwi[b]).then(b.cmp(&a)));
                if let Some(p) = best {
                    th.spki = 0.25 * mwi[p] + 0.75 * th.spki;
                    let slope = max_abs_slope(&trace.bandpassed, p);
                    accept(p, slope, &mut qrs, &mut qrs_slopes, &mut rr_history);
                    pending_noise.retain(|&q| q > p);
                }
            }
        }

        let peak = mwi[c];
        if let Some(&last) = qrs.last() {
            if c < last + REFRACTORY {
                continue;
            }
        }
        if peak > th.primary() {
            let slope = max_abs_slope(&trace.bandpassed, c);
            let is_t_wave = match (qrs.last(), qrs_slopes.last()) {
                (Some(&last), Some(&last_slope)) => {
                    c < last + T_WAVE_WINDOW && slope < 0.5 * last_slope
                }
                _ => false,
            };
            if is_t_wave {
                th.npki = 0.125 * peak + 0.875 * th.npki;
                continue;
            }
            th.spki = 0.125 * peak + 0.875 * th.spki;
            accept(c, slope, &mut qrs, &mut qrs_slopes, &mut rr_history);
            pending_noise.clear();
        } else {
            th.npki = 0.125 * peak + 0.875 * th.npki;
            pending_noise.push(c);
        }
    }
    qrs
}

/// Moves each detection to the largest raw sample within +-50 ms, then drops
/// any peak closer than the refractory period to a larger neighbour.
fn refine(samples: &[f64], detections: &[usize]) -> Vec<usize> {
    let n = samples.len();
    let mut refined: Vec<usize> = detections
        .iter()
        .map(|&d| {
            let lo = d.saturating_sub(REFINE_RADIUS);
            let hi = (d + REFINE_RADIUS).min(n - 1);
            let mut best = lo;
            for i in lo..=hi {
                if samples[i] > samples[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();
    let mut out: Vec<usize> = Vec::with_capacity(refined.len());
    for idx in refined {
        match out.last() {
            Some(&prev) if idx < prev + REFRACTORY => {
                if samples[idx] > samples[prev] {
                    *out.last_mut().unwrap() = idx;
                }
            }
            _ => out.push(idx),
        }
    }
    out
}

fn check_input(record: &EcgRecord) -> Result<(), QrsError> {
    if record.sampling_rate != SUPPORTED_RATE {
        return Err(QrsError::UnsupportedRate(record.sampling_rate));
    }
    let min_len = (2.0 * SUPPORTED_RATE) as usize;
    if record.samples.len() < min_len {
        return Err(QrsError::InvalidInput(format!(
            "need at least {min_len} samples (2 s), got {}",
            record.samples.len()
        )));
    }
    Ok(())
}

/// Band-passed and integrated signals for inspection.
pub fn detector_trace(record: &EcgRecord) -> Result<DetectorTrace, QrsError> {
    check_input(record)?;
    Ok(filter_chain(&record.samples))
}

pub fn pan_tompkins(record: &EcgRecord) -> Result<RPeakList, QrsError> {
    check_input(record)?;
    let trace = filter_chain(&record.samples);
    let detections = detect_on_trace(&trace);
    Ok(RPeakList {
        indices: refine(&record.samples, &detections),
        sampling_rate: record.sampling_rate,
    })
}

#[derive(Debug, Clone, Default)]
pub struct Segmentation {
    pub beats: Vec<Beat>,
    /// Peaks whose 651-sample window would leave the record.
    pub skipped_boundary: usize,
    /// Windows with zero variance.
    pub skipped_degenerate: usize,
}

/// Cuts a z-scored `[r - 250, r + 400]` window around every peak that fits.
pub fn segment_beats(record: &EcgRecord, peaks: &RPeakList) -> Segmentation {
    let n = record.samples.len();
    let mut out = Segmentation::default();
    for &r in &peaks.indices {
        if r < PRE_R || r + POST_R >= n {
            out.skipped_boundary += 1;
            continue;
        }
        match signal::zscore(&record.samples[r - PRE_R..=r + POST_R]) {
            Ok(samples) => out.beats.push(Beat {
                samples,
                source_record: record.record_id.clone(),
                subject_id: record.subject_id.clone(),
                r_peak_index: r,
                label: record.label,
            }),
            Err(SignalError::DegenerateBeat(_)) | Err(_) => out.skipped_degenerate += 1,
        }
    }
    out
}
