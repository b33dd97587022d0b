//! File-based pipeline stages.
//!
//! Every stage reads the previous stage's CSV manifest under the output root,
//! writes its own, and finishes by writing `config.json`. A stage whose
//! `config.json` records the same inputs is skipped unless forced.
//!
//! ```text
//! <out>/ingest/      records.csv, skipped.txt, summary.txt
//! <out>/preprocess/  manifest.csv, {noisy,clean}/<record>.f32
//! <out>/segment/     beats.csv, {noisy,clean}.beats, records.csv, report.txt
//! <out>/encode/dsN/  manifest.csv, images/<record>_<rpeak>_<kind>.png
//! <out>/train/dsN/   fold_plan.json, fold_NN.ckpt, fold_NN.json
//! <out>/eval/dsN/    fold_results.json
//! <out>/report/      results.csv, summary.txt, dsN/{results.csv,curves.csv,summary.txt,fold_results.json}
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnn::{self, CnnError, NetConfig};
use crate::gaf::{self, GafError, GafKind, IMAGE_SIZE};
use crate::qrs::{self, Beat, QrsError, BEAT_LEN};
use crate::signal;
use crate::train::{
    self, DatasetId, DatasetItem, FoldPlan, FoldResult, Hyperparams, NoiseVariant, RunReport,
    SplitMode, TrainError,
};
use crate::wfdb::{self, EcgRecord, Label, RecordEntry, ScanOptions, WfdbError};

/// reference PTB counts: labeled subjects and beats per class.
pub const REFERENCE_MI_SUBJECTS: usize = 148;
pub const REFERENCE_HEALTHY_SUBJECTS: usize = 52;
pub const REFERENCE_MI_BEATS: usize = 30_128;
pub const REFERENCE_HEALTHY_BEATS: usize = 10_139;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing manifest {} (run `{stage}` first)", path.display())]
    MissingManifest { stage: &'static str, path: PathBuf },
    #[error("--dataset-root is required for `{0}`")]
    MissingDatasetRoot(&'static str),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("malformed manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("record {record}: {message}")]
    Record { record: String, message: String },
    #[error(transparent)]
    Wfdb(#[from] WfdbError),
    #[error(transparent)]
    Gaf(#[from] GafError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn manifest_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Resolved run configuration, copied into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset_root: Option<PathBuf>,
    pub output_root: PathBuf,
    pub variants: Vec<DatasetId>,
    pub split_mode: SplitMode,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub folds: usize,
    pub lead: String,
    pub inferior_only: bool,
}

impl PipelineConfig {
    pub fn new(output_root: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            dataset_root: None,
            output_root: output_root.into(),
            variants: DatasetId::ALL.to_vec(),
            split_mode: SplitMode::BeatLevel,
            seed: 0,
            hyperparams: Hyperparams::default(),
            folds: 10,
            lead: wfdb::DEFAULT_LEAD.to_string(),
            inferior_only: false,
        }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.output_root.join(stage.name())
    }

    fn noise_variants(&self) -> Vec<NoiseVariant> {
        let mut v: Vec<NoiseVariant> = self.variants.iter().map(|d| d.noise()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// The part of the configuration a stage's output depends on.
    fn stage_inputs(&self, stage: Stage) -> serde_json::Value {
        let mut key = serde_json::json!({
            "dataset_root": self.dataset_root,
            "lead": self.lead,
            "inferior_only": self.inferior_only,
        });
        if stage >= Stage::Encode {
            key["variants"] = serde_json::json!(self.variants);
        }
        if stage >= Stage::Train {
            key["split_mode"] = serde_json::json!(self.split_mode);
            key["seed"] = serde_json::json!(self.seed);
            key["hyperparams"] = serde_json::json!(self.hyperparams);
            key["folds"] = serde_json::json!(self.folds);
        }
        key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Preprocess,
    Segment,
    Encode,
    Train,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Segment,
        Stage::Encode,
        Stage::Train,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Segment => "segment",
            Stage::Encode => "encode",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Completed,
    /// Outputs already present for the same inputs.
    UpToDate,
}

#[derive(Serialize, Deserialize)]
struct StageStamp {
    stage: String,
    inputs: serde_json::Value,
    config: PipelineConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| manifest_err(path, e))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| manifest_err(path, e))
}

fn write_config(dir: &Path, cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    write_json(
        &dir.join("config.json"),
        &StageStamp {
            stage: stage.name().to_string(),
            inputs: cfg.stage_inputs(stage),
            config: cfg.clone(),
        },
    )
}

fn is_up_to_date(dir: &Path, cfg: &PipelineConfig, stage: Stage) -> bool {
    match read_json::<StageStamp>(&dir.join("config.json")) {
        Ok(stamp) => stamp.inputs == cfg.stage_inputs(stage),
        Err(_) => false,
    }
}

/// Removes stale outputs and recreates the stage directory.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn require(stage: &'static str, path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::MissingManifest { stage, path })
    }
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| manifest_err(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| manifest_err(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| manifest_err(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| manifest_err(path, e))?;
    }
    writer.flush().map_err(io_err(path))
}

fn write_f32s(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_f32s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 4 != 0 {
        return Err(manifest_err(path, "length is not a multiple of 4 bytes"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

fn flat_name(record_id: &str) -> String {
    record_id.replace(['/', '\\'], "_")
}

// ---------------------------------------------------------------- ingest

/// Subject and beat accounting against the reference PTB counts.
pub fn ingest_summary(report: &wfdb::ScanReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "labeled records: {}", report.records.len());
    let _ = writeln!(
        out,
        "MI: {} records, {} subjects (reference {REFERENCE_MI_SUBJECTS})",
        report.count(Label::Mi),
        report.subject_count(Label::Mi)
    );
    let _ = writeln!(
        out,
        "healthy: {} records, {} subjects (reference {REFERENCE_HEALTHY_SUBJECTS})",
        report.count(Label::Healthy),
        report.subject_count(Label::Healthy)
    );
    let _ = writeln!(out, "unlabeled or filtered: {}", report.unlabeled.len());
    let _ = writeln!(out, "skipped (unreadable): {}", report.skipped.len());
    out
}

pub fn run_ingest(cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    let root = cfg
        .dataset_root
        .as_deref()
        .ok_or(PipelineError::MissingDatasetRoot("ingest"))?;
    let dir = cfg.stage_dir(Stage::Ingest);
    if !force && is_up_to_date(&dir, cfg, Stage::Ingest) {
        return Ok(StageOutcome::UpToDate);
    }
    fresh_dir(&dir)?;
    let report = wfdb::scan_dataset(
        root,
        &ScanOptions {
            lead: cfg.lead.clone(),
            inferior_only: cfg.inferior_only,
        },
    )?;
    write_csv(&dir.join("records.csv"), &report.records)?;
    let skipped = dir.join("skipped.txt");
    fs::write(&skipped, report.skip_report()).map_err(io_err(&skipped))?;
    let summary = ingest_summary(&report);
    let path = dir.join("summary.txt");
    fs::write(&path, &summary).map_err(io_err(&path))?;
    info!("ingest: {}", summary.lines().next().unwrap_or_default());
    write_config(&dir, cfg, Stage::Ingest)?;
    Ok(StageOutcome::Completed)
}

// ------------------------------------------------------------ preprocess

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SignalRow {
    record_id: String,
    subject_id: String,
    label: Label,
    variant: NoiseVariant,
    path: String,
    samples: usize,
    sampling_rate: f64,
}

pub fn run_preprocess(cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    let root = cfg
        .dataset_root
        .as_deref()
        .ok_or(PipelineError::MissingDatasetRoot("preprocess"))?;
    let records_csv = require("ingest", cfg.stage_dir(Stage::Ingest).join("records.csv"))?;
    let dir = cfg.stage_dir(Stage::Preprocess);
    if !force && is_up_to_date(&dir, cfg, Stage::Preprocess) {
        return Ok(StageOutcome::UpToDate);
    }
    fresh_dir(&dir)?;
    let entries: Vec<RecordEntry> = read_csv(&records_csv)?;
    let variants = cfg.noise_variants();
    for v in &variants {
        let d = dir.join(v.as_str());
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let rows: Vec<Result<Vec<SignalRow>>> = entries
        .par_iter()
        .map(|entry| {
            let record = wfdb::load_record(root, &entry.record_id, &cfg.lead)?;
            let mut rows = Vec::new();
            for &variant in &variants {
                let samples = match variant {
                    NoiseVariant::Noisy => record.samples.clone(),
                    NoiseVariant::Clean => signal::denoise_samples(&record.samples, signal::DENOISE_LEVELS)
                        .map_err(|e| PipelineError::Record {
                            record: entry.record_id.clone(),
                            message: e.to_string(),
                        })?,
                };
                let rel = format!("{}/{}.f32", variant, flat_name(&entry.record_id));
                write_f32s(&dir.join(&rel), samples.iter().copied())?;
                rows.push(SignalRow {
                    record_id: entry.record_id.clone(),
                    subject_id: entry.subject_id.clone(),
                    label: entry.label,
                    variant,
                    path: rel,
                    samples: samples.len(),
                    sampling_rate: record.sampling_rate,
                });
            }
            Ok(rows)
        })
        .collect();
    let mut manifest = Vec::new();
    for r in rows {
        manifest.extend(r?);
    }
    manifest.sort_by(|a, b| (a.variant, &a.record_id).cmp(&(b.variant, &b.record_id)));
    write_csv(&dir.join("manifest.csv"), &manifest)?;
    info!("preprocess: {} signals", manifest.len());
    write_config(&dir, cfg, Stage::Preprocess)?;
    Ok(StageOutcome::Completed)
}

// --------------------------------------------------------------- segment

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BeatRow {
    variant: NoiseVariant,
    record_id: String,
    subject_id: String,
    label: Label,
    r_peak_index: usize,
    /// Beat number within `<variant>.beats`.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordBeatsRow {
    variant: NoiseVariant,
    record_id: String,
    label: Label,
    peaks: usize,
    beats: usize,
    skipped_boundary: usize,
    skipped_degenerate: usize,
}

/// Per-class beat totals of each variant against the reference PTB counts,
/// followed by the per-record breakdown.
fn segment_report(rows: &[RecordBeatsRow]) -> String {
    let mut out = String::new();
    let mut totals: BTreeMap<(NoiseVariant, Label), usize> = BTreeMap::new();
    for r in rows {
        *totals.entry((r.variant, r.label)).or_default() += r.beats;
    }
    let variants: Vec<NoiseVariant> = {
        let mut v: Vec<_> = rows.iter().map(|r| r.variant).collect();
        v.dedup();
        v
    };
    for v in &variants {
        let mi = totals.get(&(*v, Label::Mi)).copied().unwrap_or(0);
        let healthy = totals.get(&(*v, Label::Healthy)).copied().unwrap_or(0);
        let _ = writeln!(out, "[{v}]");
        let _ = writeln!(
            out,
            "  MI beats      {mi:>7}  reference {REFERENCE_MI_BEATS:>7}  difference {:+}",
            mi as i64 - REFERENCE_MI_BEATS as i64
        );
        let _ = writeln!(
            out,
            "  healthy beats {healthy:>7}  reference {REFERENCE_HEALTHY_BEATS:>7}  difference {:+}",
            healthy as i64 - REFERENCE_HEALTHY_BEATS as i64
        );
        let _ = writeln!(
            out,
            "  total         {:>7}  reference {:>7}",
            mi + healthy,
            REFERENCE_MI_BEATS + REFERENCE_HEALTHY_BEATS
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "per record (variant, record, label, peaks, beats, boundary, degenerate):");
    for r in rows {
        let _ = writeln!(
            out,
            "  {}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.variant, r.record_id, r.label, r.peaks, r.beats, r.skipped_boundary, r.skipped_degenerate
        );
    }
    out
}

pub fn run_segment(cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    let pre_dir = cfg.stage_dir(Stage::Preprocess);
    let manifest = require("preprocess", pre_dir.join("manifest.csv"))?;
    let dir = cfg.stage_dir(Stage::Segment);
    if !force && is_up_to_date(&dir, cfg, Stage::Segment) {
        return Ok(StageOutcome::UpToDate);
    }
    fresh_dir(&dir)?;
    let signals: Vec<SignalRow> = read_csv(&manifest)?;
    let mut beat_rows = Vec::new();
    let mut record_rows = Vec::new();
    for variant in cfg.noise_variants() {
        let subset: Vec<&SignalRow> = signals.iter().filter(|s| s.variant == variant).collect();
        type Segmented = (RecordBeatsRow, Vec<Beat>);
        let per_record: Vec<Result<Segmented>> = subset
            .par_iter()
            .map(|row| {
                let samples = read_f32s(&pre_dir.join(&row.path))?;
                let record = EcgRecord::new(
                    &row.record_id,
                    &row.subject_id,
                    row.label,
                    &cfg.lead,
                    samples,
                    row.sampling_rate,
                )?;
                let fail = |e: QrsError| PipelineError::Record {
                    record: row.record_id.clone(),
                    message: e.to_string(),
                };
                let peaks = qrs::pan_tompkins(&record).map_err(fail)?;
                let seg = qrs::segment_beats(&record, &peaks);
                Ok((
                    RecordBeatsRow {
                        variant,
                        record_id: row.record_id.clone(),
                        label: row.label,
                        peaks: peaks.indices.len(),
                        beats: seg.beats.len(),
                        skipped_boundary: seg.skipped_boundary,
                        skipped_degenerate: seg.skipped_degenerate,
                    },
                    seg.beats,
                ))
            })
            .collect();
        let mut blob: Vec<u8> = Vec::new();
        let mut offset = 0;
        for r in per_record {
            let (summary, beats) = r?;
            for beat in beats {
                blob.extend(beat.samples.iter().flat_map(|&v| (v as f32).to_le_bytes()));
                beat_rows.push(BeatRow {
                    variant,
                    record_id: beat.source_record,
                    subject_id: beat.subject_id,
                    label: beat.label,
                    r_peak_index: beat.r_peak_index,
                    offset,
                });
                offset += 1;
            }
            record_rows.push(summary);
        }
        let path = dir.join(format!("{variant}.beats"));
        fs::write(&path, blob).map_err(io_err(&path))?;
        info!("segment [{variant}]: {offset} beats");
    }
    write_csv(&dir.join("beats.csv"), &beat_rows)?;
    write_csv(&dir.join("records.csv"), &record_rows)?;
    let path = dir.join("report.txt");
    fs::write(&path, segment_report(&record_rows)).map_err(io_err(&path))?;
    write_config(&dir, cfg, Stage::Segment)?;
    Ok(StageOutcome::Completed)
}

// ---------------------------------------------------------------- encode

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRow {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: Label,
    pub record_id: String,
    pub r_peak_index: usize,
    pub kind: GafKind,
    pub noise_variant: NoiseVariant,
}

fn beats_of(cfg: &PipelineConfig, variant: NoiseVariant) -> Result<Vec<Beat>> {
    let seg_dir = cfg.stage_dir(Stage::Segment);
    let index = require("segment", seg_dir.join("beats.csv"))?;
    let rows: Vec<BeatRow> = read_csv(&index)?;
    let blob_path = seg_dir.join(format!("{variant}.beats"));
    let blob = read_f32s(&blob_path)?;
    rows.into_iter()
        .filter(|r| r.variant == variant)
        .map(|r| {
            let start = r.offset * BEAT_LEN;
            let samples = blob
                .get(start..start + BEAT_LEN)
                .ok_or_else(|| manifest_err(&blob_path, format!("beat {} out of range", r.offset)))?
                .to_vec();
            Ok(Beat {
                samples,
                source_record: r.record_id,
                subject_id: r.subject_id,
                r_peak_index: r.r_peak_index,
                label: r.label,
            })
        })
        .collect()
}

pub fn manifest_path(cfg: &PipelineConfig, ds: DatasetId) -> PathBuf {
    cfg.stage_dir(Stage::Encode)
        .join(ds.as_str().to_ascii_lowercase())
        .join("manifest.csv")
}

pub fn run_encode(cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    require("segment", cfg.stage_dir(Stage::Segment).join("beats.csv"))?;
    let dir = cfg.stage_dir(Stage::Encode);
    if !force && is_up_to_date(&dir, cfg, Stage::Encode) {
        return Ok(StageOutcome::UpToDate);
    }
    fresh_dir(&dir)?;
    for noise in cfg.noise_variants() {
        let mut beats = beats_of(cfg, noise)?;
        beats.sort_by(|a, b| (&a.source_record, a.r_peak_index).cmp(&(&b.source_record, b.r_peak_index)));
        for &ds in cfg.variants.iter().filter(|d| d.noise() == noise) {
            let ds_dir = manifest_path(cfg, ds).parent().unwrap().to_path_buf();
            let img_dir = ds_dir.join("images");
            fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
            let rows: Vec<Result<ImageRow>> = beats
                .par_iter()
                .map(|beat| {
                    let image = gaf::encode_beat(beat, ds.kind())?;
                    let name = gaf::image_file_name(&beat.source_record, beat.r_peak_index, ds.kind());
                    gaf::write_png(&img_dir.join(&name), &image.pixels, IMAGE_SIZE)?;
                    Ok(ImageRow {
                        path: format!("images/{name}"),
                        label: beat.label,
                        record_id: beat.source_record.clone(),
                        r_peak_index: beat.r_peak_index,
                        kind: ds.kind(),
                        noise_variant: noise,
                    })
                })
                .collect();
            let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
            write_csv(&ds_dir.join("manifest.csv"), &rows)?;
            write_config(&ds_dir, cfg, Stage::Encode)?;
            info!("encode [{ds}]: {} images", rows.len());
        }
    }
    write_config(&dir, cfg, Stage::Encode)?;
    Ok(StageOutcome::Completed)
}

/// Loads every image of a dataset manifest, in manifest order.
pub fn load_dataset(manifest: &Path) -> Result<Vec<DatasetItem>> {
    let rows: Vec<ImageRow> = read_csv(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    rows.par_iter()
        .map(|row| {
            let pixels = gaf::read_png(&base.join(&row.path), IMAGE_SIZE)?;
            Ok(DatasetItem {
                pixels,
                label: row.label,
                subject_id: wfdb::subject_of(&row.record_id).to_string(),
                record_id: row.record_id.clone(),
                r_peak_index: row.r_peak_index,
            })
        })
        .collect()
}

// ----------------------------------------------------------------- train

fn ds_dir(cfg: &PipelineConfig, stage: Stage, ds: DatasetId) -> PathBuf {
    cfg.stage_dir(stage).join(ds.as_str().to_ascii_lowercase())
}

fn fold_file(dir: &Path, fold: usize, ext: &str) -> PathBuf {
    dir.join(format!("fold_{fold:02}.{ext}"))
}

fn build_plan(cfg: &PipelineConfig, items: &[DatasetItem]) -> Result<FoldPlan> {
    let subjects: Vec<&str> = items.iter().map(|i| i.subject_id.as_str()).collect();
    Ok(train::make_folds(&subjects, cfg.folds, cfg.seed, cfg.split_mode)?)
}

/// Trains every fold of every selected dataset. Completed folds of an
/// interrupted run with the same inputs are kept.
pub fn run_train(cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    let manifests = cfg
        .variants
        .iter()
        .map(|&ds| Ok((ds, require("encode", manifest_path(cfg, ds))?)))
        .collect::<Result<Vec<_>>>()?;
    let dir = cfg.stage_dir(Stage::Train);
    if !force && is_up_to_date(&dir, cfg, Stage::Train) {
        return Ok(StageOutcome::UpToDate);
    }
    let inputs_path = dir.join("inputs.json");
    let resumable = !force
        && read_json::<serde_json::Value>(&inputs_path).ok() == Some(cfg.stage_inputs(Stage::Train));
    if !resumable {
        fresh_dir(&dir)?;
        write_json(&inputs_path, &cfg.stage_inputs(Stage::Train))?;
    }
    let net = NetConfig::standard();
    for (ds, manifest) in manifests {
        let items = load_dataset(&manifest)?;
        let out = ds_dir(cfg, Stage::Train, ds);
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        let plan = build_plan(cfg, &items)?;
        write_json(&out.join("fold_plan.json"), &plan)?;
        for fold in 0..plan.k {
            let (ckpt, json) = (fold_file(&out, fold, "ckpt"), fold_file(&out, fold, "json"));
            if resumable && ckpt.is_file() && json.is_file() {
                info!("train [{ds}] fold {fold}: already done");
                continue;
            }
            info!("train [{ds}] fold {}/{} ({} items)", fold + 1, plan.k, items.len());
            let (model, result) = train::train_fold(&net, &items, &plan, fold, &cfg.hyperparams)?;
            cnn::save_checkpoint(&model, &ckpt)?;
            write_json(&json, &result)?;
        }
        write_config(&out, cfg, Stage::Train)?;
    }
    write_config(&dir, cfg, Stage::Train)?;
    Ok(StageOutcome::Completed)
}

// ------------------------------------------------------------------ eval

/// Re-evaluates each fold checkpoint on its held-out fold.
pub fn run_eval(cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    let train_dir = cfg.stage_dir(Stage::Train);
    require("train", train_dir.join("config.json"))?;
    let dir = cfg.stage_dir(Stage::Eval);
    if !force && is_up_to_date(&dir, cfg, Stage::Eval) {
        return Ok(StageOutcome::UpToDate);
    }
    fresh_dir(&dir)?;
    for &ds in &cfg.variants {
        let items = load_dataset(&require("encode", manifest_path(cfg, ds))?)?;
        let tdir = ds_dir(cfg, Stage::Train, ds);
        let plan: FoldPlan = read_json(&require("train", tdir.join("fold_plan.json"))?)?;
        if plan.assignments.len() != items.len() {
            return Err(manifest_err(&tdir.join("fold_plan.json"), "does not match the dataset manifest"));
        }
        let mut folds = Vec::with_capacity(plan.k);
        for fold in 0..plan.k {
            let mut result: FoldResult = read_json(&require("train", fold_file(&tdir, fold, "json"))?)?;
            let model = cnn::load_checkpoint::<f32>(&require("train", fold_file(&tdir, fold, "ckpt"))?)?;
            let counts = train::confusion(&model, &items, &plan.test_indices(fold))?;
            if counts != result.counts {
                warn!("eval [{ds}] fold {fold}: counts differ from training-time evaluation");
            }
            result.counts = counts;
            folds.push(result);
        }
        let report = RunReport {
            variant: ds,
            split_mode: cfg.split_mode,
            seed: cfg.seed,
            hyperparams: cfg.hyperparams,
            folds,
        };
        let out = ds_dir(cfg, Stage::Eval, ds);
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        write_json(&out.join("fold_results.json"), &report)?;
        write_config(&out, cfg, Stage::Eval)?;
    }
    write_config(&dir, cfg, Stage::Eval)?;
    Ok(StageOutcome::Completed)
}

// ---------------------------------------------------------------- report

pub fn run_report(cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    let eval_dir = cfg.stage_dir(Stage::Eval);
    require("eval", eval_dir.join("config.json"))?;
    let dir = cfg.stage_dir(Stage::Report);
    if !force && is_up_to_date(&dir, cfg, Stage::Report) {
        return Ok(StageOutcome::UpToDate);
    }
    fresh_dir(&dir)?;
    let mut combined = String::new();
    let mut summary = String::new();
    for &ds in &cfg.variants {
        let report = RunReport::load(&require("eval", ds_dir(cfg, Stage::Eval, ds).join("fold_results.json"))?)?;
        let out = ds_dir(cfg, Stage::Report, ds);
        report.emit(&out)?;
        write_config(&out, cfg, Stage::Report)?;
        let csv = report.results_csv();
        if combined.is_empty() {
            combined.push_str(&csv);
        } else {
            combined.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
        }
        summary.push_str(&report.summary_text());
        summary.push('\n');
    }
    for (name, body) in [("results.csv", combined), ("summary.txt", summary)] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    write_config(&dir, cfg, Stage::Report)?;
    Ok(StageOutcome::Completed)
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    let outcome = match stage {
        Stage::Ingest => run_ingest(cfg, force),
        Stage::Preprocess => run_preprocess(cfg, force),
        Stage::Segment => run_segment(cfg, force),
        Stage::Encode => run_encode(cfg, force),
        Stage::Train => run_train(cfg, force),
        Stage::Eval => run_eval(cfg, force),
        Stage::Report => run_report(cfg, force),
    }?;
    if outcome == StageOutcome::UpToDate {
        info!("{}: up to date, skipped", stage.name());
    }
    Ok(outcome)
}

/// Runs every stage in order. A forced run reruns all of them.
pub fn run_pipeline(cfg: &PipelineConfig, force: bool) -> Result<Vec<(Stage, StageOutcome)>> {
    Stage::ALL
        .iter()
        .map(|&s| Ok((s, run_stage(s, cfg, force)?)))
        .collect()
}

