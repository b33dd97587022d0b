mod common;

use gaf_ecg::cnn::{read_checkpoint, write_checkpoint, CnnError, CnnModel, NetConfig};
use gaf_ecg::gaf::GafKind;
use gaf_ecg::train::{
    self, derive_seed, evaluate_loss, make_folds, train_epoch, ConfusionCounts, DatasetId, DatasetItem,
    EpochStats, FoldResult, Hyperparams, RunReport, SplitMode, TrainError,
};
use gaf_ecg::wfdb::Label;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 16x16 images whose class is visible as a bright or dark band.
fn toy_items(n: usize, seed: u64) -> Vec<DatasetItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Mi } else { Label::Healthy };
            let pixels = (0..256)
                .map(|p| {
                    let row = p / 16;
                    let base = if (label == Label::Mi) == (row < 8) { 180.0 } else { 60.0 };
                    (base + rng.random_range(-40.0..40.0)) as u8
                })
                .collect();
            DatasetItem {
                pixels,
                label,
                record_id: format!("p{:02}/r{i}", i % 7),
                subject_id: format!("p{:02}", i % 7),
                r_peak_index: 1000 + i,
            }
        })
        .collect()
}

#[test]
fn twenty_images_overfit_to_full_train_accuracy() {
    let items = common::synthetic_items(10, GafKind::Summation, 11);
    let all: Vec<usize> = (0..items.len()).collect();
    let mut model = CnnModel::<f32>::init(NetConfig::standard(), 11).unwrap();
    let hp = Hyperparams::default();
    let mut reached = None;
    for epoch in 1..=200 {
        train_epoch(&mut model, &items, &all, &hp, derive_seed(11, &[epoch])).unwrap();
        let (_, acc) = evaluate_loss(&model, &items, &all).unwrap();
        if acc == 1.0 {
            reached = Some(epoch);
            break;
        }
    }
    assert!(reached.is_some(), "train accuracy never reached 100%");
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let items = toy_items(24, 1);
    let idx: Vec<usize> = (0..items.len()).collect();
    let hp = Hyperparams {
        batch_size: 5,
        ..Hyperparams::default()
    };
    let seed = 42;
    let mut straight = CnnModel::<f32>::init(NetConfig::reduced(), seed).unwrap();
    for epoch in 1..=3 {
        train_epoch(&mut straight, &items, &idx, &hp, derive_seed(seed, &[epoch])).unwrap();
    }

    let mut first = CnnModel::<f32>::init(NetConfig::reduced(), seed).unwrap();
    for epoch in 1..=2 {
        train_epoch(&mut first, &items, &idx, &hp, derive_seed(seed, &[epoch])).unwrap();
    }
    let mut resumed: CnnModel<f32> = read_checkpoint(&write_checkpoint(&first)).unwrap();
    train_epoch(&mut resumed, &items, &idx, &hp, derive_seed(seed, &[3])).unwrap();

    assert_eq!(resumed.adam.step, straight.adam.step);
    assert_eq!(write_checkpoint(&resumed), write_checkpoint(&straight));
}

#[test]
fn same_seed_gives_identical_fold_results() {
    let items = toy_items(30, 2);
    let subjects: Vec<&str> = items.iter().map(|i| i.subject_id.as_str()).collect();
    let plan = make_folds(&subjects, 3, 9, SplitMode::BeatLevel).unwrap();
    let hp = Hyperparams {
        max_epochs: 3,
        ..Hyperparams::default()
    };
    let run = || train::train_run(&NetConfig::reduced(), &items, &plan, &hp, |_, _| Ok(())).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.iter().map(|f| f.test_size).sum::<usize>(), items.len());
    for f in &a {
        assert_eq!(f.counts.total() as usize, f.test_size);
        assert_eq!(f.train_size + f.val_size + f.test_size, items.len());
    }
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let items = toy_items(8, 3);
    let idx: Vec<usize> = (0..8).collect();
    let mut model = CnnModel::<f32>::init(NetConfig::reduced(), 3).unwrap();
    let last = model.params.len() - 1;
    model.params[last][0] = f32::NAN;
    let err = train_epoch(&mut model, &items, &idx, &Hyperparams::default(), 1).unwrap_err();
    assert!(matches!(err, CnnError::Numerical(_)), "{err}");
}

#[test]
fn patient_split_keeps_subjects_out_of_training() {
    let items = toy_items(40, 4);
    let subjects: Vec<&str> = items.iter().map(|i| i.subject_id.as_str()).collect();
    let plan = make_folds(&subjects, 7, 5, SplitMode::PatientLevel).unwrap();
    for fold in 0..plan.k {
        let test: std::collections::BTreeSet<&str> = plan.test_indices(fold).iter().map(|&i| subjects[i]).collect();
        assert!(plan.rest_indices(fold).iter().all(|&i| !test.contains(subjects[i])));
    }
}

fn fold(fold: usize, counts: ConfusionCounts) -> FoldResult {
    FoldResult {
        fold,
        counts,
        epochs_run: 2,
        best_epoch: 1,
        train_size: 8,
        val_size: 2,
        test_size: counts.total() as usize,
        curve: vec![
            EpochStats {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.4,
                train_acc: 0.7,
                val_acc: 0.75,
            },
            EpochStats {
                epoch: 2,
                train_loss: 1.0 / 3.0,
                val_loss: 0.45,
                train_acc: 0.8,
                val_acc: 0.7,
            },
        ],
    }
}

fn report(folds: Vec<FoldResult>) -> RunReport {
    RunReport {
        variant: DatasetId::Ds3,
        split_mode: SplitMode::BeatLevel,
        seed: 5,
        hyperparams: Hyperparams::default(),
        folds,
    }
}

#[test]
fn single_fold_report_has_zero_std() {
    let r = report(vec![fold(0, ConfusionCounts::new(40, 50, 5, 5))]);
    let acc = r.summary(ConfusionCounts::accuracy).unwrap();
    assert_eq!((acc.mean, acc.std, acc.n), (90.0, 0.0, 1));
    assert_eq!(r.results_csv().lines().count(), 2);
    assert!(r.summary_text().contains("split: beat-level"));
}

#[test]
fn ten_fold_mean_is_arithmetic_mean() {
    let folds: Vec<FoldResult> = (0..10)
        .map(|k| fold(k, ConfusionCounts::new(30 + k as u64, 50, k as u64, 3)))
        .collect();
    let direct = folds.iter().map(|f| f.counts.accuracy().unwrap()).sum::<f64>() / 10.0;
    let r = report(folds);
    assert!((r.summary(ConfusionCounts::accuracy).unwrap().mean - direct).abs() < 1e-9);
}

#[test]
fn undefined_metric_is_reported_not_fatal() {
    let r = report(vec![
        fold(0, ConfusionCounts::new(0, 10, 1, 0)),
        fold(1, ConfusionCounts::new(5, 10, 1, 1)),
    ]);
    assert!(r.results_csv().lines().nth(1).unwrap().contains("undefined"));
    assert_eq!(r.summary(ConfusionCounts::sensitivity).unwrap().n, 1);
}

#[test]
fn report_reemitted_from_saved_results_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let r = report((0..3).map(|k| fold(k, ConfusionCounts::new(9, 7, k as u64, 1))).collect());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    r.emit(&a).unwrap();
    RunReport::load(&a.join("fold_results.json")).unwrap().emit(&b).unwrap();
    for name in ["results.csv", "curves.csv", "summary.txt", "fold_results.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let header = std::fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(header.starts_with("fold,variant,tp,tn,fp,fn,acc,sen,spe,epochs_run\n"));
    let curves = std::fs::read_to_string(a.join("curves.csv")).unwrap();
    assert!(curves.starts_with("fold,epoch,train_loss,val_loss,train_acc,val_acc\n"));
}

#[test]
fn empty_report_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(report(vec![]).emit(dir.path()), Err(TrainError::InvalidInput(_))));
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_consistent(tp in 1u64..5000, tn in 1u64..5000, fp in 0u64..500, fn_ in 0u64..500) {
        let m = train::compute_metrics(&ConfusionCounts::new(tp, tn, fp, fn_)).unwrap();
        for v in [m.accuracy, m.sensitivity, m.specificity] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        let (p, n) = ((tp + fn_) as f64, (tn + fp) as f64);
        prop_assert!((m.accuracy - (m.sensitivity * p + m.specificity * n) / (p + n)).abs() < 1e-9);
    }

    #[test]
    fn beat_folds_partition_evenly(n in 1usize..400, k in 1usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let subjects = vec!["s"; n];
        let plan = make_folds(&subjects, k, seed, SplitMode::BeatLevel).unwrap();
        let sizes = plan.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut seen = vec![0; n];
        for f in 0..k {
            for i in plan.test_indices(f) {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn patient_folds_differ_by_at_most_one_subject(
        counts in proptest::collection::vec(1usize..20, 2..40),
        k in 2usize..10,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= counts.len());
        let names: Vec<String> = (0..counts.len()).map(|s| format!("s{s}")).collect();
        let subjects: Vec<&str> = counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(names[s].as_str(), c)).collect();
        let plan = make_folds(&subjects, k, seed, SplitMode::PatientLevel).unwrap();
        let mut per_fold = vec![std::collections::BTreeSet::new(); k];
        for (i, s) in subjects.iter().enumerate() {
            per_fold[plan.assignments[i]].insert(*s);
        }
        let sizes: Vec<usize> = per_fold.iter().map(|s| s.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), counts.len());
    }
}
