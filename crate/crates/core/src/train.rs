//! Dataset variants, cross-validation folds, training loop, metrics and reports.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnn::{self, CnnError, CnnModel, NetConfig};
use crate::gaf::GafKind;
use crate::wfdb::Label;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid fold count: {0}")]
    InvalidFoldCount(String),
    #[error("{quantity} is undefined (zero denominator)")]
    UndefinedMetric { quantity: &'static str },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: CnnError,
    },
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl fmt::Display) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseVariant {
    /// Raw signal, noise and baseline wander left in.
    #[serde(rename = "noisy")]
    Noisy,
    /// Wavelet-denoised signal.
    #[serde(rename = "clean")]
    Clean,
}

impl NoiseVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseVariant::Noisy => "noisy",
            NoiseVariant::Clean => "clean",
        }
    }

    pub const ALL: [NoiseVariant; 2] = [NoiseVariant::Noisy, NoiseVariant::Clean];
}

impl fmt::Display for NoiseVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseVariant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "noisy" => Ok(NoiseVariant::Noisy),
            "clean" => Ok(NoiseVariant::Clean),
            other => Err(TrainError::InvalidInput(format!("unknown noise variant `{other}`"))),
        }
    }
}

/// The four image datasets: {noisy, clean} x {GASF, GADF}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Ds1,
    Ds2,
    Ds3,
    Ds4,
}

impl DatasetId {
    pub const ALL: [DatasetId; 4] = [DatasetId::Ds1, DatasetId::Ds2, DatasetId::Ds3, DatasetId::Ds4];

    pub fn noise(self) -> NoiseVariant {
        match self {
            DatasetId::Ds1 | DatasetId::Ds2 => NoiseVariant::Noisy,
            DatasetId::Ds3 | DatasetId::Ds4 => NoiseVariant::Clean,
        }
    }

    pub fn kind(self) -> GafKind {
        match self {
            DatasetId::Ds1 | DatasetId::Ds3 => GafKind::Summation,
            DatasetId::Ds2 | DatasetId::Ds4 => GafKind::Difference,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Ds1 => "DS1",
            DatasetId::Ds2 => "DS2",
            DatasetId::Ds3 => "DS3",
            DatasetId::Ds4 => "DS4",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ds1" => Ok(DatasetId::Ds1),
            "ds2" => Ok(DatasetId::Ds2),
            "ds3" => Ok(DatasetId::Ds3),
            "ds4" => Ok(DatasetId::Ds4),
            other => Err(TrainError::InvalidInput(format!("unknown dataset `{other}`"))),
        }
    }
}

/// Beat-level outcome counts with MI as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Mi, Label::Mi) => self.tp += 1,
            (Label::Healthy, Label::Healthy) => self.tn += 1,
            (Label::Healthy, Label::Mi) => self.fp += 1,
            (Label::Mi, Label::Healthy) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn ratio(num: u64, den: u64, quantity: &'static str) -> Result<f64, TrainError> {
        if den == 0 {
            Err(TrainError::UndefinedMetric { quantity })
        } else {
            Ok(100.0 * num as f64 / den as f64)
        }
    }

    /// (TP + TN) / all, in percent.
    pub fn accuracy(&self) -> Result<f64, TrainError> {
        Self::ratio(self.tp + self.tn, self.total(), "accuracy")
    }

    /// TP / (TP + FN), in percent.
    pub fn sensitivity(&self) -> Result<f64, TrainError> {
        Self::ratio(self.tp, self.tp + self.fn_, "sensitivity")
    }

    /// TN / (TN + FP), in percent.
    pub fn specificity(&self) -> Result<f64, TrainError> {
        Self::ratio(self.tn, self.tn + self.fp, "specificity")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Accuracy, sensitivity and specificity in percent. Fails with
/// `UndefinedMetric` naming the first quantity whose denominator is zero.
pub fn compute_metrics(counts: &ConfusionCounts) -> Result<Metrics, TrainError> {
    Ok(Metrics {
        accuracy: counts.accuracy()?,
        sensitivity: counts.sensitivity()?,
        specificity: counts.specificity()?,
    })
}

/// Percent value to two decimals, or `undefined`.
pub fn format_metric(value: &Result<f64, TrainError>) -> String {
    match value {
        Ok(v) => format!("{v:.2}"),
        Err(_) => "undefined".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Beats are assigned to folds independently.
    #[serde(rename = "beat")]
    BeatLevel,
    /// All beats of a subject share a fold.
    #[serde(rename = "patient")]
    PatientLevel,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::BeatLevel => "beat",
            SplitMode::PatientLevel => "patient",
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold id of every item, by item index.
    pub assignments: Vec<usize>,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn rest_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from a base seed.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut x = base;
    for &s in stream {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(s);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

/// Seeded shuffle followed by round-robin assignment of items (beat level) or
/// of whole subjects (patient level). `subjects[i]` is the subject of item `i`.
pub fn make_folds(
    subjects: &[&str],
    k: usize,
    seed: u64,
    split_mode: SplitMode,
) -> Result<FoldPlan, TrainError> {
    if subjects.is_empty() {
        return Err(TrainError::InvalidFoldCount("dataset is empty".into()));
    }
    if k == 0 {
        return Err(TrainError::InvalidFoldCount("k must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xF01D]));
    let mut assignments = vec![0; subjects.len()];
    match split_mode {
        SplitMode::BeatLevel => {
            if k > subjects.len() {
                return Err(TrainError::InvalidFoldCount(format!(
                    "{k} folds for {} items",
                    subjects.len()
                )));
            }
            let mut order: Vec<usize> = (0..subjects.len()).collect();
            order.shuffle(&mut rng);
            for (pos, &item) in order.iter().enumerate() {
                assignments[item] = pos % k;
            }
        }
        SplitMode::PatientLevel => {
            let mut unique: Vec<&str> = subjects.to_vec();
            unique.sort_unstable();
            unique.dedup();
            if k > unique.len() {
                return Err(TrainError::InvalidFoldCount(format!(
                    "{k} folds for {} subjects",
                    unique.len()
                )));
            }
            unique.shuffle(&mut rng);
            let fold_of: std::collections::HashMap<&str, usize> = unique
                .iter()
                .enumerate()
                .map(|(pos, &s)| (s, pos % k))
                .collect();
            for (i, s) in subjects.iter().enumerate() {
                assignments[i] = fold_of[s];
            }
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        split_mode,
        seed,
    })
}

/// One image in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetItem {
    pub pixels: Vec<u8>,
    pub label: Label,
    pub record_id: String,
    pub subject_id: String,
    pub r_peak_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Share of the non-test items used for validation.
    pub validation_fraction: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: cnn::DEFAULT_LEARNING_RATE,
            batch_size: 8,
            max_epochs: 50,
            patience: 5,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub counts: ConfusionCounts,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub curve: Vec<EpochStats>,
}

/// Mean loss and accuracy (fraction) of a model over `indices`.
pub fn evaluate_loss(model: &CnnModel<f32>, items: &[DatasetItem], indices: &[usize]) -> Result<(f64, f64), CnnError> {
    if indices.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let per_item: Vec<Result<(f64, bool), CnnError>> = indices
        .par_iter()
        .map(|&i| {
            let item = &items[i];
            let p = model.predict_pixels(&item.pixels)?;
            Ok((cnn::loss(&p, item.label), p.predicted_class == item.label))
        })
        .collect();
    let mut loss = 0.0;
    let mut hits = 0usize;
    for r in per_item {
        let (l, h) = r?;
        loss += l;
        hits += usize::from(h);
    }
    Ok((loss / indices.len() as f64, hits as f64 / indices.len() as f64))
}

pub fn confusion(model: &CnnModel<f32>, items: &[DatasetItem], indices: &[usize]) -> Result<ConfusionCounts, CnnError> {
    let preds: Vec<Result<Label, CnnError>> = indices
        .par_iter()
        .map(|&i| Ok(model.predict_pixels(&items[i].pixels)?.predicted_class))
        .collect();
    let mut counts = ConfusionCounts::default();
    for (&i, p) in indices.iter().zip(preds) {
        counts.record(items[i].label, p?);
    }
    Ok(counts)
}

/// One pass over `train` in an order fixed by `epoch_seed`. Returns the mean
/// batch loss and the running accuracy seen during the pass.
pub fn train_epoch(
    model: &mut CnnModel<f32>,
    items: &[DatasetItem],
    train: &[usize],
    hp: &Hyperparams,
    epoch_seed: u64,
) -> Result<(f64, f64), CnnError> {
    if hp.batch_size == 0 {
        return Err(CnnError::Config("batch size must be positive".into()));
    }
    let mut order = train.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in order.chunks(hp.batch_size) {
        let inputs: Vec<Vec<f32>> = batch
            .iter()
            .map(|&i| CnnModel::<f32>::input_from_pixels(&items[i].pixels))
            .collect();
        let labels: Vec<Label> = batch.iter().map(|&i| items[i].label).collect();
        let out = model.batch_gradients(&inputs, &labels)?;
        if !out.loss.is_finite() {
            return Err(CnnError::Numerical(format!(
                "non-finite batch loss at step {}",
                model.adam.step + 1
            )));
        }
        model.adam_step(&out.grads, hp.learning_rate)?;
        loss_sum += out.loss * batch.len() as f64;
        correct += out.correct;
    }
    let n = order.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Trains on `train`, early-stopping on validation loss (training loss when
/// there is no validation set). Returns the best model and the curve.
pub fn fit(
    config: &NetConfig,
    items: &[DatasetItem],
    train: &[usize],
    val: &[usize],
    hp: &Hyperparams,
    seed: u64,
) -> Result<(CnnModel<f32>, usize, Vec<EpochStats>), CnnError> {
    let mut model = CnnModel::<f32>::init(config.clone(), seed)?;
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut curve = Vec::new();
    for epoch in 1..=hp.max_epochs {
        let (train_loss, train_acc) =
            train_epoch(&mut model, items, train, hp, derive_seed(seed, &[epoch as u64]))?;
        let (val_loss, val_acc) = evaluate_loss(&model, items, val)?;
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            train_acc,
            val_acc,
        });
        let monitored = if val.is_empty() { train_loss } else { val_loss };
        info!("epoch {epoch}: train loss {train_loss:.4} acc {train_acc:.4}, val loss {val_loss:.4} acc {val_acc:.4}");
        if monitored < best_loss {
            best_loss = monitored;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                break;
            }
        }
    }
    Ok((best, best_epoch, curve))
}

/// Trains and tests one fold: the fold is the test set, the rest is split
/// into training and validation parts.
pub fn train_fold(
    config: &NetConfig,
    items: &[DatasetItem],
    plan: &FoldPlan,
    fold: usize,
    hp: &Hyperparams,
) -> Result<(CnnModel<f32>, FoldResult), TrainError> {
    let test = plan.test_indices(fold);
    let mut rest = plan.rest_indices(fold);
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[0x5A1, fold as u64])));
    let n_val = ((rest.len() as f64) * hp.validation_fraction).round() as usize;
    let n_val = n_val.min(rest.len().saturating_sub(1));
    let (val, train) = rest.split_at(n_val);
    if train.is_empty() {
        return Err(TrainError::InvalidInput(format!("fold {fold} has no training items")));
    }
    let fold_seed = derive_seed(plan.seed, &[0x1417, fold as u64]);
    let wrap = |source| TrainError::Fold { fold, source };
    let (model, best_epoch, curve) = fit(config, items, train, val, hp, fold_seed).map_err(wrap)?;
    let counts = confusion(&model, items, &test).map_err(wrap)?;
    Ok((
        model,
        FoldResult {
            fold,
            counts,
            epochs_run: curve.len(),
            best_epoch,
            train_size: train.len(),
            val_size: val.len(),
            test_size: test.len(),
            curve,
        },
    ))
}

/// Runs every fold of the plan in fold order. `on_fold` sees each trained
/// model as it completes (used to write checkpoints).
pub fn train_run(
    config: &NetConfig,
    items: &[DatasetItem],
    plan: &FoldPlan,
    hp: &Hyperparams,
    mut on_fold: impl FnMut(&CnnModel<f32>, &FoldResult) -> Result<(), TrainError>,
) -> Result<Vec<FoldResult>, TrainError> {
    if plan.k < 2 {
        return Err(TrainError::InvalidFoldCount("cross-validation needs at least 2 folds".into()));
    }
    if plan.assignments.len() != items.len() {
        return Err(TrainError::InvalidInput("fold plan does not match dataset".into()));
    }
    let mut results = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        info!("fold {}/{}", fold + 1, plan.k);
        let (model, result) = train_fold(config, items, plan, fold, hp)?;
        on_fold(&model, &result)?;
        results.push(result);
    }
    Ok(results)
}

/// Results of one dataset variant, enough to re-emit every report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: DatasetId,
    pub split_mode: SplitMode,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Folds where the metric was defined.
    pub n: usize,
}

/// Mean and sample standard deviation (0 for a single value) of the defined values.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> Option<MeanStd> {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd {
        mean,
        std,
        n: v.len(),
    })
}

impl RunReport {
    pub fn summary(&self, metric: fn(&ConfusionCounts) -> Result<f64, TrainError>) -> Option<MeanStd> {
        mean_std(self.folds.iter().filter_map(|f| metric(&f.counts).ok()))
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from("fold,variant,tp,tn,fp,fn,acc,sen,spe,epochs_run\n");
        for f in &self.folds {
            let c = &f.counts;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                f.fold,
                self.variant,
                c.tp,
                c.tn,
                c.fp,
                c.fn_,
                format_metric(&c.accuracy()),
                format_metric(&c.sensitivity()),
                format_metric(&c.specificity()),
                f.epochs_run
            );
        }
        out
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from("fold,epoch,train_loss,val_loss,train_acc,val_acc\n");
        for f in &self.folds {
            for e in &f.curve {
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6},{:.6},{:.6}",
                    f.fold, e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc
                );
            }
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "variant: {} ({} {})", self.variant, self.variant.noise(), self.variant.kind());
        let _ = writeln!(out, "split: {}-level", self.split_mode);
        let _ = writeln!(out, "seed: {}", self.seed);
        let hp = &self.hyperparams;
        let _ = writeln!(
            out,
            "hyperparameters: lr {} batch {} max_epochs {} patience {}",
            hp.learning_rate, hp.batch_size, hp.max_epochs, hp.patience
        );
        let _ = writeln!(out, "folds: {}", self.folds.len());
        let _ = writeln!(out);
        let metrics: [(&str, fn(&ConfusionCounts) -> Result<f64, TrainError>); 3] = [
            ("accuracy", ConfusionCounts::accuracy),
            ("sensitivity", ConfusionCounts::sensitivity),
            ("specificity", ConfusionCounts::specificity),
        ];
        for (name, f) in metrics {
            match self.summary(f) {
                Some(ms) => {
                    let _ = writeln!(
                        out,
                        "{name:<12} {:.2} +- {:.2} % (defined in {}/{} folds)",
                        ms.mean,
                        ms.std,
                        ms.n,
                        self.folds.len()
                    );
                }
                None => {
                    let _ = writeln!(out, "{name:<12} undefined");
                }
            }
        }
        let _ = writeln!(out);
        for f in &self.folds {
            let c = &f.counts;
            let _ = writeln!(
                out,
                "fold {}: train {} val {} test {} | epochs {} (best {})",
                f.fold, f.train_size, f.val_size, f.test_size, f.epochs_run, f.best_epoch
            );
            let _ = writeln!(out, "                 pred MI  pred healthy");
            let _ = writeln!(out, "  true MI       {:>8}  {:>12}", c.tp, c.fn_);
            let _ = writeln!(out, "  true healthy  {:>8}  {:>12}", c.fp, c.tn);
        }
        out
    }

    /// Writes `results.csv`, `curves.csv`, `summary.txt` and `fold_results.json`.
    pub fn emit(&self, dir: &Path) -> Result<(), TrainError> {
        if self.folds.is_empty() {
            return Err(TrainError::InvalidInput("no completed folds to report".into()));
        }
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| io_err(dir, e))?;
        for (name, body) in [
            ("results.csv", self.results_csv()),
            ("curves.csv", self.curves_csv()),
            ("summary.txt", self.summary_text()),
            ("fold_results.json", json + "\n"),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }
}
