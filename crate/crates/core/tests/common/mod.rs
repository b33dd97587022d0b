#![allow(dead_code)]

use gaf_ecg::gaf::{encode_beat, GafKind};
use gaf_ecg::qrs::{pan_tompkins, segment_beats};
use gaf_ecg::synth::{synthesize, Morphology, SynthSpec};
use gaf_ecg::train::DatasetItem;
use gaf_ecg::wfdb::{EcgRecord, Label};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Beats of synthetic subjects, encoded as images, until `per_class` beats
/// of each class exist. Each subject gets its own perturbed morphology,
/// heart rate, drift and noise level.
pub fn synthetic_items(per_class: usize, kind: GafKind, seed: u64) -> Vec<DatasetItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for label in [Label::Healthy, Label::Mi] {
        let mut have = 0;
        let mut subject = 0;
        while have < per_class {
            let subject_id = format!("{label}{subject:03}");
            let ecg = synthesize(&SynthSpec {
                duration_s: 60.0,
                heart_rate_bpm: rng.random_range(55.0..95.0),
                rr_jitter: 0.05,
                morphology: Morphology::for_label(label).perturbed(&mut rng, 0.15),
                drift_hz: rng.random_range(0.1..0.5),
                drift_amplitude: rng.random_range(0.05..0.4),
                snr_db: Some(rng.random_range(15.0..30.0)),
                seed: rng.random(),
                ..SynthSpec::default()
            });
            let record_id = format!("{subject_id}/s{subject:04}");
            let record = EcgRecord::new(&record_id, &subject_id, label, "ii", ecg.samples, 1000.0).unwrap();
            let peaks = pan_tompkins(&record).unwrap();
            for beat in segment_beats(&record, &peaks).beats {
                if have == per_class {
                    break;
                }
                let image = encode_beat(&beat, kind).unwrap();
                items.push(DatasetItem {
                    pixels: image.pixels,
                    label,
                    record_id: record_id.clone(),
                    subject_id: subject_id.clone(),
                    r_peak_index: beat.r_peak_index,
                });
                have += 1;
            }
            subject += 1;
        }
    }
    items
}

/// Maps detections to reference peaks within `tol` samples.
/// Returns (true positives, false positives, false negatives, max offset).
pub fn match_peaks(found: &[usize], truth: &[usize], tol: usize) -> (usize, usize, usize, usize) {
    let mut used = vec![false; found.len()];
    let mut tp = 0;
    let mut worst = 0;
    for &t in truth {
        let best = found
            .iter()
            .enumerate()
            .filter(|(i, &f)| !used[*i] && f.abs_diff(t) <= tol)
            .min_by_key(|(_, &f)| f.abs_diff(t));
        if let Some((i, &f)) = best {
            used[i] = true;
            tp += 1;
            worst = worst.max(f.abs_diff(t));
        }
    }
    (tp, found.len() - tp, truth.len() - tp, worst)
}
