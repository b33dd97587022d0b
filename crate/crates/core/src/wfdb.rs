//! PTB-style waveform records: text header plus interleaved 16-bit signal files.
//!
//! Only the subset of the WFDB container used by the PTB diagnostic database is
//! supported: single-segment records whose signals are stored as format 16
//! (little-endian two's-complement). Everything else is rejected up front.

use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sampling rate of every PTB recording.
pub const PTB_SAMPLING_RATE: f64 = 1000.0;

/// Lead used by the classifier.
pub const DEFAULT_LEAD: &str = "ii";

#[derive(Debug, Error)]
pub enum WfdbError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported storage format `{0}` (only format 16 is supported)")]
    UnsupportedFormat(String),
    #[error("lead `{0}` not found in record")]
    LeadNotFound(String),
    #[error("unlabeled record: {0}")]
    Unlabeled(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn parse_err(msg: impl Into<String>) -> WfdbError {
    WfdbError::Parse(msg.into())
}

/// Two-class label. MI is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Mi,
}

impl Label {
    /// Output-unit index of the class (0 = healthy, 1 = MI).
    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Mi => 1,
        }
    }

    pub fn from_index(idx: usize) -> Self {
        if idx == 0 {
            Label::Healthy
        } else {
            Label::Mi
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Mi => "mi",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = WfdbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(Label::Healthy),
            "mi" => Ok(Label::Mi),
            other => Err(parse_err(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageFormat {
    /// Format 16: 16-bit two's-complement, little-endian.
    Int16Le,
}

impl StorageFormat {
    fn parse(field: &str) -> Result<Self, WfdbError> {
        match field {
            "16" => Ok(StorageFormat::Int16Le),
            other => Err(WfdbError::UnsupportedFormat(other.to_string())),
        }
    }

    fn code(self) -> &'static str {
        match self {
            StorageFormat::Int16Le => "16",
        }
    }

    pub fn bytes_per_sample(self) -> usize {
        2
    }
}

/// One signal line of a header. Optional WFDB fields are normalized to their
/// defaults at parse time so a parsed header always serializes completely.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file_name: String,
    pub storage_format: StorageFormat,
    /// ADC units per physical unit (mV).
    pub adc_gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_resolution: u32,
    pub adc_zero: i32,
    pub initial_value: i32,
    pub checksum: i32,
    pub block_size: u32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    pub record_name: String,
    pub num_signals: usize,
    pub sampling_rate: f64,
    pub samples_per_signal: usize,
    pub base_time: Option<String>,
    pub base_date: Option<String>,
    pub signals: Vec<SignalSpec>,
    /// Comment lines with the leading `#` removed, otherwise verbatim.
    pub comments: Vec<String>,
}

/// Lead-II voltage series of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub subject_id: String,
    pub label: Label,
    pub lead_name: String,
    /// Millivolts.
    pub samples: Vec<f64>,
    pub sampling_rate: f64,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        subject_id: impl Into<String>,
        label: Label,
        lead_name: impl Into<String>,
        samples: Vec<f64>,
        sampling_rate: f64,
    ) -> Result<Self, WfdbError> {
        if samples.is_empty() {
            return Err(WfdbError::InvalidRecord("empty signal".into()));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(WfdbError::InvalidRecord(format!(
                "non-finite sample at index {pos}"
            )));
        }
        if sampling_rate.is_nan() || sampling_rate <= 0.0 {
            return Err(WfdbError::InvalidRecord(format!(
                "sampling rate must be positive, got {sampling_rate}"
            )));
        }
        Ok(EcgRecord {
            record_id: record_id.into(),
            subject_id: subject_id.into(),
            label,
            lead_name: lead_name.into(),
            samples,
            sampling_rate,
        })
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        EcgRecord {
            samples,
            ..self.clone()
        }
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, what: &str) -> Result<T, WfdbError> {
    field
        .parse::<T>()
        .map_err(|_| parse_err(format!("invalid {what} `{field}`")))
}

fn parse_record_line(line: &str) -> Result<RecordHeader, WfdbError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(parse_err(format!(
            "record line needs name, signal count, sampling rate and sample count: `{line}`"
        )));
    }
    let record_name = fields[0];
    if record_name.contains('/') {
        return Err(WfdbError::UnsupportedFormat(
            "multi-segment record".to_string(),
        ));
    }
    let num_signals: usize = parse_num(fields[1], "signal count")?;
    // `fs[/counter_freq[(base_counter)]]`
    let fs_field = fields[2].split('/').next().unwrap_or_default();
    let sampling_rate: f64 = parse_num(fs_field, "sampling rate")?;
    if sampling_rate <= 0.0 || !sampling_rate.is_finite() {
        return Err(parse_err(format!("sampling rate must be positive: `{fs_field}`")));
    }
    let samples_per_signal: usize = parse_num(fields[3], "sample count")?;
    if samples_per_signal == 0 {
        return Err(parse_err("sample count must be positive"));
    }
    if num_signals == 0 {
        return Err(parse_err("record declares no signals"));
    }
    Ok(RecordHeader {
        record_name: record_name.to_string(),
        num_signals,
        sampling_rate,
        samples_per_signal,
        base_time: fields.get(4).map(|s| s.to_string()),
        base_date: fields.get(5).map(|s| s.to_string()),
        signals: Vec::new(),
        comments: Vec::new(),
    })
}

fn parse_signal_line(line: &str) -> Result<SignalSpec, WfdbError> {
    let mut fields = line.split_whitespace();
    let file_name = fields
        .next()
        .ok_or_else(|| parse_err("empty signal line"))?
        .to_string();
    let format_field = fields
        .next()
        .ok_or_else(|| parse_err(format!("signal line lacks a format: `{line}`")))?;
    let storage_format = StorageFormat::parse(format_field)?;

    let mut adc_gain: f64 = 200.0;
    let mut explicit_baseline = None;
    let mut units = "mV".to_string();
    if let Some(gain_field) = fields.next() {
        let (gain_part, unit_part) = match gain_field.split_once('/') {
            Some((g, u)) => (g, Some(u)),
            None => (gain_field, None),
        };
        let gain_str = match gain_part.split_once('(') {
            Some((g, rest)) => {
                let b = rest
                    .strip_suffix(')')
                    .ok_or_else(|| parse_err(format!("unterminated baseline in `{gain_field}`")))?;
                explicit_baseline = Some(parse_num::<i32>(b, "baseline")?);
                g
            }
            None => gain_part,
        };
        adc_gain = parse_num(gain_str, "ADC gain")?;
        if let Some(u) = unit_part {
            units = u.to_string();
        }
    }
    if adc_gain == 0.0 || !adc_gain.is_finite() {
        return Err(parse_err(format!("ADC gain must be non-zero: `{line}`")));
    }
    let adc_resolution = match fields.next() {
        Some(f) => parse_num(f, "ADC resolution")?,
        None => 12,
    };
    let adc_zero = match fields.next() {
        Some(f) => parse_num(f, "ADC zero")?,
        None => 0,
    };
    let initial_value = match fields.next() {
        Some(f) => parse_num(f, "initial value")?,
        None => adc_zero,
    };
    let checksum = match fields.next() {
        Some(f) => parse_num(f, "checksum")?,
        None => 0,
    };
    let block_size = match fields.next() {
        Some(f) => parse_num(f, "block size")?,
        None => 0,
    };
    let description = fields.collect::<Vec<_>>().join(" ");
    Ok(SignalSpec {
        file_name,
        storage_format,
        adc_gain,
        baseline: explicit_baseline.unwrap_or(adc_zero),
        units,
        adc_resolution,
        adc_zero,
        initial_value,
        checksum,
        block_size,
        description,
    })
}

/// Parses the text of a `.hea` header.
pub fn parse_header(header_text: &str) -> Result<RecordHeader, WfdbError> {
    let mut header: Option<RecordHeader> = None;
    let mut comments = Vec::new();
    let mut signals = Vec::new();
    for raw in header_text.lines() {
        let line = raw.trim_end_matches('\r');
        if let Some(comment) = line.trim_start().strip_prefix('#') {
            comments.push(comment.to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match header {
            None => header = Some(parse_record_line(line)?),
            Some(_) => signals.push(parse_signal_line(line)?),
        }
    }
    let mut header = header.ok_or_else(|| parse_err("header has no record line"))?;
    if signals.len() != header.num_signals {
        return Err(parse_err(format!(
            "record declares {} signals but {} signal lines were found",
            header.num_signals,
            signals.len()
        )));
    }
    header.signals = signals;
    header.comments = comments;
    Ok(header)
}

impl RecordHeader {
    /// Serializes back to header text; `parse_header` of the result yields `self`.
    pub fn to_header_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "{} {} {} {}",
            self.record_name, self.num_signals, self.sampling_rate, self.samples_per_signal
        );
        if let Some(t) = &self.base_time {
            let _ = write!(out, " {t}");
            if let Some(d) = &self.base_date {
                let _ = write!(out, " {d}");
            }
        }
        out.push('\n');
        for s in &self.signals {
            let _ = write!(
                out,
                "{} {} {}({})/{} {} {} {} {} {}",
                s.file_name,
                s.storage_format.code(),
                s.adc_gain,
                s.baseline,
                s.units,
                s.adc_resolution,
                s.adc_zero,
                s.initial_value,
                s.checksum,
                s.block_size
            );
            if !s.description.is_empty() {
                let _ = write!(out, " {}", s.description);
            }
            out.push('\n');
        }
        for c in &self.comments {
            let _ = writeln!(out, "#{c}");
        }
        out
    }

    /// Index of the signal whose description matches `lead_name`
    /// (case-insensitive, surrounding whitespace ignored).
    pub fn find_lead(&self, lead_name: &str) -> Result<usize, WfdbError> {
        let wanted = lead_name.trim().to_ascii_lowercase();
        let mut hits = self
            .signals
            .iter()
            .enumerate()
            .filter(|(_, s)| s.description.trim().to_ascii_lowercase() == wanted);
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (Some(_), Some(_)) => Err(parse_err(format!("lead `{lead_name}` is ambiguous"))),
            (None, _) => Err(WfdbError::LeadNotFound(lead_name.to_string())),
        }
    }

    /// Signals sharing the file of signal `idx`, in header order, and the
    /// position of `idx` within that group.
    fn file_group(&self, idx: usize) -> (usize, usize) {
        let file = &self.signals[idx].file_name;
        let mut count = 0;
        let mut pos = 0;
        for (i, s) in self.signals.iter().enumerate() {
            if &s.file_name == file {
                if i == idx {
                    pos = count;
                }
                count += 1;
            }
        }
        (count, pos)
    }

    pub fn is_inferior_mi(&self) -> bool {
        self.comments.iter().any(|c| {
            let c = c.to_ascii_lowercase();
            c.contains("localization") && c.contains("infer")
        })
    }
}

/// De-interleaves one lead from the raw bytes of the signal file that holds it
/// and converts to mV as `(adc - baseline) / gain`.
///
/// `raw_bytes` must contain exactly `signals_in_file * samples_per_signal`
/// 16-bit samples, where `signals_in_file` counts the header's signals stored in
/// the same file as the requested lead (all of them for single-file records).
pub fn read_lead(
    header: &RecordHeader,
    raw_bytes: &[u8],
    lead_name: &str,
) -> Result<Vec<f64>, WfdbError> {
    let idx = header.find_lead(lead_name)?;
    let spec = &header.signals[idx];
    let (stride, offset) = header.file_group(idx);
    let width = spec.storage_format.bytes_per_sample();
    let expected = stride * header.samples_per_signal * width;
    if raw_bytes.len() != expected {
        return Err(parse_err(format!(
            "signal file `{}` has {} bytes, expected {} ({} signals x {} samples x {} bytes)",
            spec.file_name,
            raw_bytes.len(),
            expected,
            stride,
            header.samples_per_signal,
            width
        )));
    }
    let frame = stride * width;
    let samples = raw_bytes
        .chunks_exact(frame)
        .map(|f| {
            let lo = offset * width;
            let adc = i16::from_le_bytes([f[lo], f[lo + 1]]);
            (f64::from(adc) - f64::from(spec.baseline)) / spec.adc_gain
        })
        .collect();
    Ok(samples)
}

/// Reads `lead_name` into a labeled record. Record and subject ids default to
/// the header's record name.
pub fn read_signal(
    header: &RecordHeader,
    raw_bytes: &[u8],
    lead_name: &str,
) -> Result<EcgRecord, WfdbError> {
    let samples = read_lead(header, raw_bytes, lead_name)?;
    let label = label_record(header)?;
    let idx = header.find_lead(lead_name)?;
    EcgRecord::new(
        header.record_name.clone(),
        header.record_name.clone(),
        label,
        header.signals[idx].description.trim().to_string(),
        samples,
        header.sampling_rate,
    )
}

/// Class label from the diagnosis comment. The `Reason for admission` line is
/// authoritative when present; otherwise every comment is searched.
pub fn label_record(header: &RecordHeader) -> Result<Label, WfdbError> {
    let lowered: Vec<String> = header
        .comments
        .iter()
        .map(|c| c.to_ascii_lowercase())
        .collect();
    let admission = lowered.iter().find_map(|c| {
        c.split_once("reason for admission:")
            .map(|(_, v)| v.trim().to_string())
    });
    let candidates: Vec<&str> = match &admission {
        Some(v) => vec![v.as_str()],
        None => lowered.iter().map(String::as_str).collect(),
    };
    let is_mi = candidates.iter().any(|c| c.contains("myocardial infarction"));
    let is_healthy = candidates.iter().any(|c| c.contains("healthy control"));
    match (is_mi, is_healthy) {
        (true, false) => Ok(Label::Mi),
        (false, true) => Ok(Label::Healthy),
        (true, true) => Err(WfdbError::Unlabeled("conflicting diagnoses".into())),
        (false, false) => Err(WfdbError::Unlabeled(match admission {
            Some(v) if !v.is_empty() => format!("diagnosis `{v}` is neither MI nor healthy control"),
            _ => "no diagnosis comment".to_string(),
        })),
    }
}

/// Subject of a record id: its first path component (`patient001/s0010_re`
/// belongs to `patient001`), or the id itself for flat layouts.
pub fn subject_of(record_id: &str) -> &str {
    match record_id.split_once('/') {
        Some((subject, _)) => subject,
        None => record_id,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub record_id: String,
    pub subject_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub record_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub records: Vec<RecordEntry>,
    /// Parseable records whose diagnosis is neither MI nor healthy control
    /// (or that fail the inferior-MI filter).
    pub unlabeled: Vec<SkippedRecord>,
    /// Records that could not be parsed or lack the requested lead.
    pub skipped: Vec<SkippedRecord>,
}

impl ScanReport {
    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn subject_count(&self, label: Label) -> usize {
        let mut subjects: Vec<&str> = self
            .records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.subject_id.as_str())
            .collect();
        subjects.sort_unstable();
        subjects.dedup();
        subjects.len()
    }

    /// One line per excluded record: `<record id>\t<reason>`, unlabeled first.
    pub fn skip_report(&self) -> String {
        let mut out = String::new();
        for s in self.unlabeled.iter().chain(&self.skipped) {
            let _ = writeln!(out, "{}\t{}", s.record_id, s.reason.replace(['\n', '\t'], " "));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub lead: String,
    /// Keep only MI records whose metadata names an inferior localization.
    pub inferior_only: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            lead: DEFAULT_LEAD.to_string(),
            inferior_only: false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> WfdbError + '_ {
    move |source| WfdbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn record_id_for(root: &Path, header_path: &Path) -> String {
    let rel = header_path.strip_prefix(root).unwrap_or(header_path);
    let rel = rel.with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn header_path(root: &Path, record_id: &str) -> PathBuf {
    root.join(format!("{record_id}.hea"))
}

/// Lists every labeled record under `root`, sorted by record id.
pub fn scan_dataset(root: &Path, options: &ScanOptions) -> Result<ScanReport, WfdbError> {
    let mut header_paths = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            WfdbError::Io {
                source: e
                    .into_io_error()
                    .unwrap_or_else(|| io::Error::other("directory walk failed")),
                path,
            }
        })?;
        if entry.file_type().is_file()
            && entry.path().extension().is_some_and(|e| e == "hea")
        {
            header_paths.push(entry.into_path());
        }
    }
    let mut ids: Vec<(String, PathBuf)> = header_paths
        .into_iter()
        .map(|p| (record_id_for(root, &p), p))
        .collect();
    ids.sort();

    let mut report = ScanReport::default();
    for (record_id, path) in ids {
        let skip = |reason: String| SkippedRecord {
            record_id: record_id.clone(),
            reason,
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                report.skipped.push(skip(format!("unreadable header: {e}")));
                continue;
            }
        };
        let header = match parse_header(&text) {
            Ok(h) => h,
            Err(e) => {
                report.skipped.push(skip(e.to_string()));
                continue;
            }
        };
        let label = match label_record(&header) {
            Ok(l) => l,
            Err(e) => {
                report.unlabeled.push(skip(e.to_string()));
                continue;
            }
        };
        if let Err(e) = header.find_lead(&options.lead) {
            report.skipped.push(skip(e.to_string()));
            continue;
        }
        if options.inferior_only && label == Label::Mi && !header.is_inferior_mi() {
            report
                .unlabeled
                .push(skip("MI without inferior localization (filtered)".into()));
            continue;
        }
        report.records.push(RecordEntry {
            subject_id: subject_of(&record_id).to_string(),
            record_id,
            label,
        });
    }
    Ok(report)
}

/// Loads one record's lead from disk.
pub fn load_record(root: &Path, record_id: &str, lead_name: &str) -> Result<EcgRecord, WfdbError> {
    let hea = header_path(root, record_id);
    let text = fs::read_to_string(&hea).map_err(io_err(&hea))?;
    let header = parse_header(&text)?;
    let idx = header.find_lead(lead_name)?;
    let dir = hea.parent().unwrap_or(root);
    let dat = dir.join(&header.signals[idx].file_name);
    let raw = fs::read(&dat).map_err(io_err(&dat))?;
    let mut record = read_signal(&header, &raw, lead_name)?;
    record.record_id = record_id.to_string();
    record.subject_id = subject_of(record_id).to_string();
    Ok(record)
}

/// Writes a single-file, format-16 record (header + `.dat`) to `dir`.
/// `signals` holds one ADC series per lead, all of equal length.
pub fn write_record(
    dir: &Path,
    record_name: &str,
    sampling_rate: f64,
    leads: &[(&str, f64, i32)],
    signals: &[Vec<i16>],
    comments: &[String],
) -> Result<(), WfdbError> {
    if leads.len() != signals.len() || signals.is_empty() {
        return Err(WfdbError::InvalidRecord("lead/signal count mismatch".into()));
    }
    let n = signals[0].len();
    if n == 0 || signals.iter().any(|s| s.len() != n) {
        return Err(WfdbError::InvalidRecord("signals must be non-empty and of equal length".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let dat_name = format!("{record_name}.dat");
    let header = RecordHeader {
        record_name: record_name.to_string(),
        num_signals: leads.len(),
        sampling_rate,
        samples_per_signal: n,
        base_time: None,
        base_date: None,
        signals: leads
            .iter()
            .zip(signals)
            .map(|(&(name, gain, baseline), s)| SignalSpec {
                file_name: dat_name.clone(),
                storage_format: StorageFormat::Int16Le,
                adc_gain: gain,
                baseline,
                units: "mV".into(),
                adc_resolution: 16,
                adc_zero: baseline,
                initial_value: i32::from(s[0]),
                checksum: s.iter().fold(0i16, |acc, &v| acc.wrapping_add(v)) as i32,
                block_size: 0,
                description: name.to_string(),
            })
            .collect(),
        comments: comments.to_vec(),
    };
    let mut raw = Vec::with_capacity(n * leads.len() * 2);
    for t in 0..n {
        for s in signals {
            raw.extend_from_slice(&s[t].to_le_bytes());
        }
    }
    let hea = dir.join(format!("{record_name}.hea"));
    fs::write(&hea, header.to_header_text()).map_err(io_err(&hea))?;
    let dat = dir.join(dat_name);
    fs::write(&dat, raw).map_err(io_err(&dat))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PTB_LIKE: &str = "s0010_re 15 1000 38400\n\
s0010_re.dat 16 2000 16 0 -489 -8337 0 i\n\
s0010_re.dat 16 2000 16 0 -458 -11541 0 ii\n\
s0010_re.dat 16 2000 16 0 31 19858 0 iii\n\
s0010_re.dat 16 2000 16 0 474 9865 0 avr\n\
s0010_re.dat 16 2000 16 0 -260 -11016 0 avl\n\
s0010_re.dat 16 2000 16 0 -214 -25624 0 avf\n\
s0010_re.dat 16 2000 16 0 -335 -2908 0 v1\n\
s0010_re.dat 16 2000 16 0 -112 -26568 0 v2\n\
s0010_re.dat 16 2000 16 0 -43 31427 0 v3\n\
s0010_re.dat 16 2000 16 0 -101 28061 0 v4\n\
s0010_re.dat 16 2000 16 0 -65 -7316 0 v5\n\
s0010_re.dat 16 2000 16 0 -25 -2902 0 v6\n\
s0010_re.xyz 16 200 16 0 -74 9065 0 vx\n\
s0010_re.xyz 16 200 16 0 -48 -13553 0 vy\n\
s0010_re.xyz 16 200 16 0 -14 11729 0 vz\n\
# age: 81\n\
# sex: female\n\
# Reason for admission: Myocardial infarction\n\
# Acute infarction (localization): infero-latera\n";

    fn minimal(comment: &str) -> String {
        format!("r1 1 1000 1\nr1.dat 16 1 16 0 0 0 0 ii\n#{comment}\n")
    }

    #[test]
    fn parses_ptb_header() {
        let h = parse_header(PTB_LIKE).unwrap();
        assert_eq!(h.num_signals, 15);
        assert_eq!(h.sampling_rate, 1000.0);
        assert_eq!(h.samples_per_signal, 38400);
        assert_eq!(h.signals[1].description, "ii");
        assert_eq!(h.signals[1].baseline, 0);
        assert_eq!(h.signals[1].adc_gain, 2000.0);
        assert_eq!(h.comments[0], " age: 81");
        assert_eq!(h.comments.len(), 4);
        assert!(h.is_inferior_mi());
        assert_eq!(label_record(&h).unwrap(), Label::Mi);
    }

    #[test]
    fn parses_minimal_header() {
        let h = parse_header(&minimal(" Reason for admission: Healthy control")).unwrap();
        assert_eq!(h.samples_per_signal, 1);
        assert_eq!(h.num_signals, 1);
        assert_eq!(h.signals[0].adc_gain, 1.0);
    }

    #[test]
    fn missing_sampling_rate_is_parse_error() {
        let err = parse_header("r1 1\nr1.dat 16 200 16 0 0 0 0 ii\n").unwrap_err();
        assert!(matches!(err, WfdbError::Parse(_)), "{err}");
        let err = parse_header("r1 1 1000\nr1.dat 16 200 16 0 0 0 0 ii\n").unwrap_err();
        assert!(matches!(err, WfdbError::Parse(_)), "{err}");
    }

    #[test]
    fn signal_count_mismatch_is_parse_error() {
        let err = parse_header("r1 2 1000 10\nr1.dat 16 200 16 0 0 0 0 ii\n").unwrap_err();
        assert!(matches!(err, WfdbError::Parse(_)));
    }

    #[test]
    fn other_formats_rejected() {
        let err = parse_header("r1 1 1000 10\nr1.dat 212 200 12 0 0 0 0 ii\n").unwrap_err();
        assert!(matches!(err, WfdbError::UnsupportedFormat(ref f) if f == "212"));
        let err = parse_header("r1 1 1000 10\nr1.dat 80 200 8 0 0 0 0 ii\n").unwrap_err();
        assert!(matches!(err, WfdbError::UnsupportedFormat(_)));
    }

    #[test]
    fn zero_gain_rejected() {
        assert!(parse_header("r1 1 1000 10\nr1.dat 16 0 16 0 0 0 0 ii\n").is_err());
    }

    #[test]
    fn gain_with_baseline_and_units() {
        let h = parse_header("r1 1 500 4\nr1.dat 16 200(-12)/uV 12 7 3 0 0 Lead II\n").unwrap();
        let s = &h.signals[0];
        assert_eq!(s.baseline, -12);
        assert_eq!(s.adc_zero, 7);
        assert_eq!(s.units, "uV");
        assert_eq!(s.description, "Lead II");
    }

    #[test]
    fn header_round_trips() {
        for text in [PTB_LIKE.to_string(), minimal(" Dysrhythmia")] {
            let h = parse_header(&text).unwrap();
            let again = parse_header(&h.to_header_text()).unwrap();
            assert_eq!(h, again);
        }
    }

    #[test]
    fn lead_lookup_is_case_insensitive_and_trimmed() {
        let h = parse_header(PTB_LIKE).unwrap();
        assert_eq!(h.find_lead(" II ").unwrap(), 1);
        assert!(matches!(h.find_lead("V7"), Err(WfdbError::LeadNotFound(_))));
    }

    #[test]
    fn baseline_samples_read_as_zero() {
        let h = parse_header("r1 1 1000 5\nr1.dat 16 200(-7) 16 0 0 0 0 ii\n# Healthy control\n")
            .unwrap();
        let raw: Vec<u8> = (0..5).flat_map(|_| (-7i16).to_le_bytes()).collect();
        let rec = read_signal(&h, &raw, "ii").unwrap();
        assert_eq!(rec.samples, vec![0.0; 5]);
        assert_eq!(rec.label, Label::Healthy);
    }

    #[test]
    fn deinterleaves_second_lead() {
        let h = parse_header(
            "r2 2 1000 6\nr2.dat 16 100 16 0 0 0 0 i\nr2.dat 16 100 16 0 0 0 0 ii\n",
        )
        .unwrap();
        let lead1: Vec<i16> = vec![1, 2, 3, 4, 5, 6];
        let lead2: Vec<i16> = vec![-100, 200, -300, 400, -500, 600];
        let raw: Vec<u8> = lead1
            .iter()
            .zip(&lead2)
            .flat_map(|(a, b)| a.to_le_bytes().into_iter().chain(b.to_le_bytes()))
            .collect();
        let got = read_lead(&h, &raw, "ii").unwrap();
        let words: Vec<i16> = raw
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        for (t, v) in got.iter().enumerate() {
            assert_eq!(*v, f64::from(words[2 * t + 1]) / 100.0);
        }
    }

    #[test]
    fn truncated_bytes_are_parse_error() {
        let h = parse_header("r1 1 1000 5\nr1.dat 16 200 16 0 0 0 0 ii\n").unwrap();
        let raw = vec![0u8; 9];
        assert!(matches!(read_lead(&h, &raw, "ii"), Err(WfdbError::Parse(_))));
    }

    #[test]
    fn separate_frank_lead_file_uses_its_own_stride() {
        let h = parse_header(PTB_LIKE).unwrap();
        // vx lives in the .xyz file with two other leads
        let raw = vec![0u8; 3 * 38400 * 2];
        assert_eq!(read_lead(&h, &raw, "vx").unwrap().len(), 38400);
        assert!(read_lead(&h, &raw, "ii").is_err());
    }

    #[test]
    fn labels() {
        let lab = |c: &str| label_record(&parse_header(&minimal(c)).unwrap());
        assert_eq!(lab(" Reason for admission: Myocardial infarction").unwrap(), Label::Mi);
        assert_eq!(lab(" Reason for admission: Healthy control").unwrap(), Label::Healthy);
        assert!(matches!(lab(" Reason for admission: Dysrhythmia"), Err(WfdbError::Unlabeled(_))));
        assert!(matches!(lab(" Dysrhythmia"), Err(WfdbError::Unlabeled(_))));
        // The admission reason wins over history notes mentioning infarction.
        let h = parse_header(
            "r1 1 1000 1\nr1.dat 16 1 16 0 0 0 0 ii\n# Reason for admission: Healthy control\n# Infarction date: n/a\n",
        )
        .unwrap();
        assert_eq!(label_record(&h).unwrap(), Label::Healthy);
    }

    #[test]
    fn subject_from_record_id() {
        assert_eq!(subject_of("patient001/s0010_re"), "patient001");
        assert_eq!(subject_of("rec7"), "rec7");
    }
}
