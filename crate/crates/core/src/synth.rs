//! Synthetic lead-II ECG built from Gaussian P/Q/R/S/T waves.
//!
//! The generator knows where every R wave is, which makes it the ground truth
//! for detector benchmarks. It also writes small PTB-shaped corpora so the
//! whole pipeline can be exercised without the real database.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::wfdb::{self, Label, WfdbError};

/// One Gaussian component: center relative to the R wave (s), width (s), amplitude (mV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub offset: f64,
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Morphology {
    pub waves: Vec<Wave>,
}

const fn wave(offset: f64, width: f64, amplitude: f64) -> Wave {
    Wave {
        offset,
        width,
        amplitude,
    }
}

impl Morphology {
    pub fn healthy() -> Self {
        Morphology {
            waves: vec![
                wave(-0.200, 0.025, 0.15),
                wave(-0.030, 0.008, -0.12),
                wave(0.000, 0.010, 1.00),
                wave(0.035, 0.010, -0.25),
                wave(0.280, 0.050, 0.30),
            ],
        }
    }

    /// Inferior-MI-like beat: pathological Q, reduced R, ST elevation, inverted T.
    pub fn infarct() -> Self {
        Morphology {
            waves: vec![
                wave(-0.200, 0.025, 0.12),
                wave(-0.035, 0.014, -0.40),
                wave(0.000, 0.010, 0.75),
                wave(0.030, 0.010, -0.15),
                wave(0.130, 0.060, 0.22),
                wave(0.300, 0.045, -0.30),
            ],
        }
    }

    pub fn for_label(label: Label) -> Self {
        match label {
            Label::Healthy => Self::healthy(),
            Label::Mi => Self::infarct(),
        }
    }

    /// Subject-level variation: scales amplitudes and widths, shifts timings.
    pub fn perturbed(&self, rng: &mut impl Rng, spread: f64) -> Self {
        let gain = 1.0 + spread * rng.random_range(-1.0..1.0);
        Morphology {
            waves: self
                .waves
                .iter()
                .map(|w| Wave {
                    offset: if w.offset == 0.0 {
                        0.0
                    } else {
                        w.offset * (1.0 + 0.5 * spread * rng.random_range(-1.0..1.0))
                    },
                    width: w.width * (1.0 + 0.5 * spread * rng.random_range(-1.0..1.0)),
                    amplitude: w.amplitude * gain * (1.0 + spread * rng.random_range(-1.0..1.0)),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub sampling_rate: f64,
    pub duration_s: f64,
    pub heart_rate_bpm: f64,
    /// Relative RR-interval jitter (uniform, +-).
    pub rr_jitter: f64,
    pub morphology: Morphology,
    pub drift_hz: f64,
    /// Peak drift amplitude in mV.
    pub drift_amplitude: f64,
    /// White Gaussian noise level relative to the clean ECG power.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            sampling_rate: 1000.0,
            duration_s: 30.0,
            heart_rate_bpm: 60.0,
            rr_jitter: 0.0,
            morphology: Morphology::healthy(),
            drift_hz: 0.3,
            drift_amplitude: 0.0,
            snr_db: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEcg {
    /// Noisy, drifting signal in mV.
    pub samples: Vec<f64>,
    /// The same signal without drift or noise.
    pub clean: Vec<f64>,
    /// Sample index of every R wave center.
    pub r_peaks: Vec<usize>,
}

pub fn synthesize(spec: &SynthSpec) -> SyntheticEcg {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fs = spec.sampling_rate;
    let n = (spec.duration_s * fs).round() as usize;
    let rr = 60.0 / spec.heart_rate_bpm;

    // First R wave half an interval in, so the preceding P wave fits.
    let mut beat_times = Vec::new();
    let mut t = 0.5 * rr;
    while t * fs < n as f64 {
        beat_times.push(t);
        let jitter = 1.0 + spec.rr_jitter * rng.random_range(-1.0..1.0);
        t += rr * jitter;
    }

    let mut clean = vec![0.0; n];
    for &bt in &beat_times {
        for w in &spec.morphology.waves {
            let center = (bt + w.offset) * fs;
            let sigma = w.width * fs;
            let lo = (center - 5.0 * sigma).floor().max(0.0) as usize;
            let hi = ((center + 5.0 * sigma).ceil() as usize).min(n.saturating_sub(1));
            for (i, v) in clean.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let z = (i as f64 - center) / sigma;
                *v += w.amplitude * (-0.5 * z * z).exp();
            }
        }
    }
    let r_peaks: Vec<usize> = beat_times
        .iter()
        .map(|&bt| (bt * fs).round() as usize)
        .filter(|&i| i < n)
        .collect();

    let power = clean.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    let noise_std = spec
        .snr_db
        .map(|snr| (power / 10f64.powf(snr / 10.0)).sqrt())
        .unwrap_or(0.0);
    let normal = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let phase = rng.random_range(0.0..2.0 * PI);
    let samples = clean
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let drift = spec.drift_amplitude * (2.0 * PI * spec.drift_hz * i as f64 / fs + phase).sin();
            let noise = if noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            v + drift + noise
        })
        .collect();
    SyntheticEcg {
        samples,
        clean,
        r_peaks,
    }
}

/// Layout of a generated corpus.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub healthy_subjects: usize,
    pub mi_subjects: usize,
    pub records_per_subject: usize,
    pub duration_s: f64,
    /// Adds a record with an out-of-scope diagnosis.
    pub include_unlabeled: bool,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            healthy_subjects: 3,
            mi_subjects: 3,
            records_per_subject: 1,
            duration_s: 20.0,
            include_unlabeled: true,
            seed: 1,
        }
    }
}

const ADC_GAIN: f64 = 2000.0;

fn quantize(mv: &[f64]) -> Vec<i16> {
    mv.iter()
        .map(|v| (v * ADC_GAIN).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect()
}

/// Writes a PTB-shaped tree (`patientNNN/sNNNN_re.{hea,dat}`) with leads i and ii.
pub fn write_corpus(root: &Path, spec: &CorpusSpec) -> Result<(), WfdbError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut subjects: Vec<Option<Label>> = Vec::new();
    subjects.extend(std::iter::repeat_n(Some(Label::Mi), spec.mi_subjects));
    subjects.extend(std::iter::repeat_n(Some(Label::Healthy), spec.healthy_subjects));
    if spec.include_unlabeled {
        subjects.push(None);
    }
    let mut record_no = 10;
    for (s, label) in subjects.iter().enumerate() {
        let patient = format!("patient{:03}", s + 1);
        let base = Morphology::for_label(label.unwrap_or(Label::Healthy));
        let morphology = base.perturbed(&mut rng, 0.15);
        for _ in 0..spec.records_per_subject {
            let ecg = synthesize(&SynthSpec {
                duration_s: spec.duration_s,
                heart_rate_bpm: rng.random_range(55.0..95.0),
                rr_jitter: 0.05,
                morphology: morphology.perturbed(&mut rng, 0.03),
                drift_amplitude: rng.random_range(0.05..0.4),
                drift_hz: rng.random_range(0.1..0.5),
                snr_db: Some(rng.random_range(18.0..30.0)),
                seed: rng.random(),
                ..SynthSpec::default()
            });
            let lead_i: Vec<f64> = ecg.samples.iter().map(|v| 0.6 * v).collect();
            let reason = match label {
                Some(Label::Mi) => "Myocardial infarction",
                Some(Label::Healthy) => "Healthy control",
                None => "Dysrhythmia",
            };
            let mut comments = vec![
                " age: 60".to_string(),
                format!(" Reason for admission: {reason}"),
            ];
            if *label == Some(Label::Mi) {
                comments.push(" Acute infarction (localization): inferior".to_string());
            }
            wfdb::write_record(
                &root.join(&patient),
                &format!("s{record_no:04}_re"),
                1000.0,
                &[("i", ADC_GAIN, 0), ("ii", ADC_GAIN, 0)],
                &[quantize(&lead_i), quantize(&ecg.samples)],
                &comments,
            )?;
            record_no += 1;
        }
    }
    Ok(())
}
