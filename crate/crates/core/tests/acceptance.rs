//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails unexpectedly.
//!
//! Criterion 9 runs against a real PTB tree when `PTB_ROOT` points at one;
//! otherwise only its synthetic-corpus half runs.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use gaf_ecg::cnn::{self, CnnModel, NetConfig};
use gaf_ecg::gaf::{self, GafKind, IMAGE_SIZE};
use gaf_ecg::pipeline::{self, PipelineConfig, Stage};
use gaf_ecg::qrs::pan_tompkins;
use gaf_ecg::synth::{synthesize, write_corpus, CorpusSpec, Morphology, SynthSpec};
use gaf_ecg::train::{self, compute_metrics, ConfusionCounts, Hyperparams, SplitMode};
use gaf_ecg::wavelet::{dwt_forward, dwt_inverse, max_level};
use gaf_ecg::wfdb::{EcgRecord, Label};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Status {
    Pass(String),
    Fail(String),
    /// Fails as literally stated for a documented, analyzed reason; the check
    /// still asserts that nothing beyond the analyzed cases deviates.
    KnownFail(String),
    Skip(String),
}

type Check = fn() -> Status;

fn main() {
    let checks: &[(&str, &str, Check)] = &[
        ("1a", "metrics oracle: published-results accuracy", c1a_accuracy),
        ("1b", "metrics oracle: published-results sensitivity/specificity", c1b_sen_spe),
        ("2", "GAF property suite (1000 random beats)", c2_gaf),
        ("3", "wavelet perfect reconstruction", c3_wavelet),
        ("4", "Pan-Tompkins synthetic benchmark", c4_pan_tompkins),
        ("5", "gradient check (16x16 reduced network, f64)", c5_gradients),
        ("6", "layer shape conformance", c6_shapes),
        ("7a", "learning sanity: single-batch overfit", c7a_overfit),
        ("7b", "learning sanity: 2000-beat balanced subset", c7b_subset),
        ("8", "end-to-end determinism (CLI pipeline twice)", c8_determinism),
        ("9a", "corpus accounting on a synthetic corpus", c9a_synthetic),
        ("9b", "corpus accounting on the PTB tree", c9b_ptb),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    let mut tally = BTreeMap::new();
    for (id, name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| id.starts_with(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let status = check();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match status {
            Status::Pass(d) => ("PASS", d),
            Status::Fail(d) => {
                unexpected += 1;
                ("FAIL", d)
            }
            Status::KnownFail(d) => ("FAIL", format!("{d} [known, see notes]")),
            Status::Skip(d) => ("SKIP", d),
        };
        *tally.entry(tag).or_insert(0) += 1;
        println!("{tag} {id:<3} {name}: {detail} ({secs:.1}s)");
    }
    println!("summary: {tally:?}; unexpected failures: {unexpected}");
    if unexpected > 0 {
        std::process::exit(1);
    }
}

fn verdict(ok: bool, detail: String) -> Status {
    if ok {
        Status::Pass(detail)
    } else {
        Status::Fail(detail)
    }
}

// ------------------------------------------------------------------ 1

/// (name, TN, TP, FP, FN, printed ACC, printed SEN, printed SPE)
const PUBLISHED_RESULTS: [(&str, u64, u64, u64, u64, f64, f64, f64); 4] = [
    ("DS1", 2505, 7530, 19, 13, 99.68, 99.8, 99.2),
    ("DS2", 2508, 7539, 16, 4, 99.80, 99.9, 99.3),
    ("DS3", 2509, 7540, 15, 3, 99.82, 99.9, 99.4),
    ("DS4", 2510, 7541, 14, 2, 99.84, 99.7, 99.4),
];

const METRIC_TOL: f64 = 0.05;

fn c1a_accuracy() -> Status {
    let mut worst: f64 = 0.0;
    for (_, tn, tp, fp, fn_, acc, _, _) in PUBLISHED_RESULTS {
        let m = compute_metrics(&ConfusionCounts::new(tp, tn, fp, fn_)).unwrap();
        worst = worst.max((m.accuracy - acc).abs());
    }
    verdict(worst <= METRIC_TOL, format!("4/4 rows, max deviation {worst:.4} pp (tolerance {METRIC_TOL})"))
}

fn c1b_sen_spe() -> Status {
    let mut off = Vec::new();
    for (name, tn, tp, fp, fn_, _, sen, spe) in PUBLISHED_RESULTS {
        let m = compute_metrics(&ConfusionCounts::new(tp, tn, fp, fn_)).unwrap();
        for (q, got, printed) in [("SEN", m.sensitivity, sen), ("SPE", m.specificity, spe)] {
            if (got - printed).abs() > METRIC_TOL {
                off.push(format!("{name} {q} {got:.3} vs {printed}"));
            }
        }
    }
    // Three printed values cannot be reproduced from the printed counts: two are
    // one-decimal truncations (off by 0.06-0.07) and DS4 SEN 99.7 contradicts
    // TP=7541, FN=2 (99.97).
    let known = ["DS2 SPE", "DS3 SEN", "DS4 SEN"];
    let detail = format!("{}/8 within {METRIC_TOL}; off: {}", 8 - off.len(), off.join(", "));
    if off.is_empty() {
        Status::Pass(detail)
    } else if off.len() == known.len() && off.iter().zip(known).all(|(o, k)| o.starts_with(k)) {
        Status::KnownFail(detail)
    } else {
        Status::Fail(detail)
    }
}

// ------------------------------------------------------------------ 2

fn c2_gaf() -> Status {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = IMAGE_SIZE;
    let mut worst_dual: f64 = 0.0;
    for b in 0..1000 {
        let len = if b % 2 == 0 { 651 } else { rng.random_range(128..2000) };
        let scale = rng.random_range(0.01..100.0);
        let beat: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let reduced = gaf::paa_downsample(&beat, n).unwrap();
        let x = gaf::minmax_rescale(&reduced).unwrap();
        if x.iter().cloned().fold(f64::INFINITY, f64::min) != -1.0
            || x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) != 1.0
        {
            return Status::Fail(format!("beat {b}: min-max endpoints not exactly -1/+1"));
        }
        let phi = gaf::to_polar(&x).unwrap();
        let s = gaf::gasf(&phi);
        let d = gaf::gadf(&phi);
        let s_img: Vec<u8> = s.entries.iter().map(|&v| gaf::quantize(v)).collect();
        for i in 0..n {
            if d.get(i, i) != 0.0 {
                return Status::Fail(format!("beat {b}: GADF diagonal entry {i} is {}", d.get(i, i)));
            }
            for j in 0..n {
                let (sv, dv) = (s.get(i, j), d.get(i, j));
                if s.get(j, i) != sv || s_img[i * n + j] != s_img[j * n + i] {
                    return Status::Fail(format!("beat {b}: GASF asymmetric at ({i},{j})"));
                }
                if d.get(j, i) != -dv {
                    return Status::Fail(format!("beat {b}: GADF not antisymmetric at ({i},{j})"));
                }
                if !(-1.0..=1.0).contains(&sv) || !(-1.0..=1.0).contains(&dv) {
                    return Status::Fail(format!("beat {b}: entry outside [-1, 1] at ({i},{j})"));
                }
                let (si, sj) = ((1.0 - x[i] * x[i]).sqrt(), (1.0 - x[j] * x[j]).sqrt());
                worst_dual = worst_dual
                    .max((sv - (x[i] * x[j] - si * sj)).abs())
                    .max((dv - (si * x[j] - x[i] * sj)).abs());
            }
        }
    }
    let levels_ok = gaf::quantize(-1.0) == 0 && gaf::quantize(0.0) == 128 && gaf::quantize(1.0) == 255;
    verdict(
        worst_dual <= 1e-12 && levels_ok,
        format!("max trig/algebraic difference {worst_dual:.2e} (tolerance 1e-12), quantization -1/0/+1 -> 0/128/255: {levels_ok}"),
    )
}

// ------------------------------------------------------------------ 3

fn c3_wavelet() -> Status {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut levels_seen = [false; 10];
    for _ in 0..100 {
        let len = rng.random_range(512..=8192);
        // Nine levels need at least 7 * 2^9 samples; shorter signals use their deepest level.
        let levels = rng.random_range(1..=9).min(max_level(len));
        levels_seen[levels] = true;
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = dwt_inverse(&dwt_forward(&x, levels).unwrap()).unwrap();
        let num = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    let covered = levels_seen[1..].iter().filter(|&&s| s).count();
    verdict(
        worst <= 1e-10 && covered == 9,
        format!("max relative error {worst:.2e} (tolerance 1e-10), levels covered {covered}/9"),
    )
}

// ------------------------------------------------------------------ 4

fn c4_pan_tompkins() -> Status {
    let tol = 10; // 10 ms at 1000 Hz
    let (mut tp, mut fp, mut fn_, mut worst) = (0, 0, 0, 0);
    let mut case = 0;
    for bpm in [40.0, 60.0, 80.0, 100.0, 120.0] {
        for snr in [10.0, 20.0] {
            for drift in [0.0, 0.5] {
                for label in [Label::Healthy, Label::Mi] {
                    case += 1;
                    let ecg = synthesize(&SynthSpec {
                        duration_s: 60.0,
                        heart_rate_bpm: bpm,
                        rr_jitter: 0.05,
                        morphology: Morphology::for_label(label),
                        drift_hz: 0.3,
                        drift_amplitude: drift,
                        snr_db: Some(snr),
                        seed: case,
                        ..SynthSpec::default()
                    });
                    let record = EcgRecord::new("bench", "bench", label, "ii", ecg.samples, 1000.0).unwrap();
                    let found = pan_tompkins(&record).unwrap().indices;
                    let (t, f, n, w) = common::match_peaks(&found, &ecg.r_peaks, tol);
                    tp += t;
                    fp += f;
                    fn_ += n;
                    worst = worst.max(w);
                }
            }
        }
    }
    let se = 100.0 * tp as f64 / (tp + fn_) as f64;
    let ppv = 100.0 * tp as f64 / (tp + fp) as f64;
    verdict(
        se >= 99.0 && ppv >= 99.0,
        format!("{case} records, {} beats: Se {se:.2}%, +P {ppv:.2}%, worst matched offset {worst} ms", tp + fn_),
    )
}

// ------------------------------------------------------------------ 5

fn c5_gradients() -> Status {
    let config = NetConfig::reduced();
    let mut model = CnnModel::<f64>::init(config.clone(), 5).unwrap();
    let names = config.tensor_names();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n_in = config.input_size * config.input_size * config.input_channels;
    let h = 1e-6;
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut checked = 0;
    for label in [Label::Healthy, Label::Mi] {
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(0.0..1.0)).collect();
        let (_, cache) = model.forward(&x, true).unwrap();
        let analytic = model.backward(&cache.unwrap(), label, 1.0);
        for t in 0..model.params.len() {
            for i in 0..model.params[t].len() {
                let orig = model.params[t][i];
                model.params[t][i] = orig + h;
                let up = cnn::loss(&model.forward(&x, false).unwrap().0, label);
                model.params[t][i] = orig - h;
                let down = cnn::loss(&model.forward(&x, false).unwrap().0, label);
                model.params[t][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[t][i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                let e = worst.entry(names[t].clone()).or_insert(0.0);
                *e = e.max(rel);
                checked += 1;
            }
        }
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    let (worst_name, _) = worst.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    verdict(
        max < 1e-4 && worst.len() == 12,
        format!(
            "{checked} partial derivatives over {} tensors, max relative error {max:.2e} ({worst_name}), tolerance 1e-4",
            worst.len()
        ),
    )
}

// ------------------------------------------------------------------ 6

fn c6_shapes() -> Status {
    let model = CnnModel::<f32>::init(NetConfig::standard(), 6).unwrap();
    let (_, cache) = model.forward(&vec![0.5; 128 * 128], true).unwrap();
    let trace: Vec<String> = cache
        .unwrap()
        .trace
        .iter()
        .map(|(name, s)| {
            if s.height == 1 && s.width == 1 && name.starts_with(['f', 'd']) {
                format!("{name}={}", s.channels)
            } else {
                format!("{name}={s}")
            }
        })
        .collect();
    let expected = [
        "input=128x128x1",
        "conv1=128x128x16",
        "pool1=64x64x16",
        "conv2=63x63x32",
        "pool2=31x31x32",
        "conv3=30x30x64",
        "pool3=15x15x64",
        "conv4=14x14x128",
        "pool4=7x7x128",
        "flatten=6272",
        "dense1=100",
        "dense2=2",
    ];
    let ok = trace == expected;
    verdict(
        ok,
        if ok {
            format!("{} activations match, {} parameters", trace.len(), model.param_count())
        } else {
            format!("got {trace:?}")
        },
    )
}

// ------------------------------------------------------------------ 7

fn c7a_overfit() -> Status {
    let items = common::synthetic_items(4, GafKind::Summation, 71);
    let inputs: Vec<Vec<f32>> = items.iter().map(|i| CnnModel::<f32>::input_from_pixels(&i.pixels)).collect();
    let labels: Vec<Label> = items.iter().map(|i| i.label).collect();
    let mut model = CnnModel::<f32>::init(NetConfig::standard(), 7).unwrap();
    let mut last = f64::NAN;
    for step in 1..=200 {
        let out = model.batch_gradients(&inputs, &labels).unwrap();
        last = out.loss;
        if out.loss < 0.01 {
            return Status::Pass(format!("batch of {} reached loss {last:.4} after {} Adam steps", inputs.len(), step - 1));
        }
        model.adam_step(&out.grads, 0.001).unwrap();
    }
    let final_loss = model.batch_gradients(&inputs, &labels).unwrap().loss;
    verdict(final_loss < 0.01, format!("loss {final_loss:.4} after 200 steps (previous {last:.4})"))
}

fn c7b_subset() -> Status {
    let items = common::synthetic_items(1000, GafKind::Summation, 72);
    let subjects: Vec<&str> = items.iter().map(|i| i.subject_id.as_str()).collect();
    let plan = train::make_folds(&subjects, 5, 72, SplitMode::BeatLevel).unwrap();
    let hp = Hyperparams {
        max_epochs: 3,
        patience: 2,
        ..Hyperparams::default()
    };
    let (_, result) = train::train_fold(&NetConfig::standard(), &items, &plan, 0, &hp).unwrap();
    let acc = result.counts.accuracy().unwrap();
    verdict(
        acc >= 90.0,
        format!(
            "train {} / val {} / test {} beats, {} epochs (best {}), test accuracy {acc:.2}% (threshold 90)",
            result.train_size, result.val_size, result.test_size, result.epochs_run, result.best_epoch
        ),
    )
}

// ------------------------------------------------------------------ 8

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "config.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c8_determinism() -> Status {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    write_corpus(&corpus, &CorpusSpec::default()).unwrap();
    let mut outputs = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "2")] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_gaf-ecg"))
            .args(["pipeline", "--seed", "7", "--folds", "2", "--epochs", "1", "--dataset-root"])
            .arg(&corpus)
            .arg("--out")
            .arg(&out)
            .env("GAF_ECG_THREADS", threads)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        if !status.success() {
            return Status::Fail(format!("run {run} exited with {status}"));
        }
        let mut files = files_under(&out.join("report"));
        for (k, v) in files_under(&out.join("train")) {
            if k.extension().is_some_and(|e| e == "ckpt") {
                files.insert(Path::new("train").join(k), v);
            }
        }
        outputs.push(files);
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let differing: Vec<_> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let ckpts = a.keys().filter(|k| k.extension().is_some_and(|e| e == "ckpt")).count();
    verdict(
        differing.is_empty() && a.len() == b.len() && ckpts == 8,
        format!(
            "{} report files and {ckpts} checkpoints compared (1 vs 2 worker threads), {} differ",
            a.len() - ckpts,
            differing.len()
        ),
    )
}

// ------------------------------------------------------------------ 9

fn c9a_synthetic() -> Status {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let spec = CorpusSpec {
        mi_subjects: 4,
        healthy_subjects: 3,
        records_per_subject: 2,
        ..CorpusSpec::default()
    };
    write_corpus(&corpus, &spec).unwrap();
    let mut cfg = PipelineConfig::new(tmp.path().join("out"));
    cfg.dataset_root = Some(corpus);
    for stage in [Stage::Ingest, Stage::Preprocess, Stage::Segment] {
        pipeline::run_stage(stage, &cfg, false).unwrap();
    }
    let summary = fs::read_to_string(cfg.stage_dir(Stage::Ingest).join("summary.txt")).unwrap();
    let skipped = fs::read_to_string(cfg.stage_dir(Stage::Ingest).join("skipped.txt")).unwrap();
    let report = fs::read_to_string(cfg.stage_dir(Stage::Segment).join("report.txt")).unwrap();
    let subjects_ok = summary.contains("MI: 8 records, 4 subjects") && summary.contains("healthy: 6 records, 3 subjects");
    let unlabeled_ok = skipped.lines().count() == 2 && skipped.contains("dysrhythmia");
    let per_record = report.lines().filter(|l| l.starts_with("  noisy\t") || l.starts_with("  clean\t")).count();
    let reference_ok = report.contains("reference   30128") && report.contains("reference   10139");
    verdict(
        subjects_ok && unlabeled_ok && per_record == 28 && reference_ok,
        format!(
            "subjects 4 MI / 3 healthy: {subjects_ok}; unlabeled reported: {unlabeled_ok}; {per_record}/28 per-record rows; reference totals listed: {reference_ok}"
        ),
    )
}

fn c9b_ptb() -> Status {
    let Some(root) = std::env::var_os("PTB_ROOT").map(PathBuf::from) else {
        return Status::Skip("PTB_ROOT not set; the PTB database is not bundled".into());
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(tmp.path());
    cfg.dataset_root = Some(root);
    for stage in [Stage::Ingest, Stage::Preprocess, Stage::Segment] {
        if let Err(e) = pipeline::run_stage(stage, &cfg, false) {
            return Status::Fail(format!("{}: {e}", stage.name()));
        }
    }
    let summary = fs::read_to_string(cfg.stage_dir(Stage::Ingest).join("summary.txt")).unwrap();
    let report = fs::read_to_string(cfg.stage_dir(Stage::Segment).join("report.txt")).unwrap();
    let totals: Vec<&str> = report.lines().take_while(|l| !l.is_empty()).collect();
    let ok = summary.contains("148 subjects") && summary.contains("52 subjects");
    verdict(ok, format!("{} | {}", summary.lines().skip(1).take(2).collect::<Vec<_>>().join("; "), totals.join(" ")))
}
