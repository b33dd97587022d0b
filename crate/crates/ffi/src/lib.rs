//! C ABI over `gaf-ecg`.
//!
//! Every fallible function returns a [`GafEcgStatus`]. On failure a message
//! is kept per thread and can be copied out with [`gaf_ecg_last_error`].
//! Models are opaque handles created by [`gaf_ecg_model_new`] or
//! [`gaf_ecg_model_load`] and released with [`gaf_ecg_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use gaf_ecg::cnn::{self, CnnError, CnnModel, NetConfig};
use gaf_ecg::gaf::{self, GafError, GafKind, IMAGE_SIZE};
use gaf_ecg::qrs::{self, QrsError};
use gaf_ecg::signal::{self, SignalError};
use gaf_ecg::train::{ConfusionCounts, TrainError};
use gaf_ecg::wfdb::{EcgRecord, Label};

/// Number of pixels in one encoded image (128 x 128).
pub const GAF_ECG_IMAGE_PIXELS: usize = 16384;
/// Number of class scores produced by a prediction.
pub const GAF_ECG_CLASSES: usize = 2;

const _: () = assert!(GAF_ECG_IMAGE_PIXELS == IMAGE_SIZE * IMAGE_SIZE);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GafEcgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    DegenerateInput = 4,
    Io = 5,
    Checkpoint = 6,
    Numerical = 7,
    UndefinedMetric = 8,
    UnsupportedRate = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GafEcgKind {
    Gasf = 0,
    Gadf = 1,
}

/// Percentages computed from confusion counts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GafEcgMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Opaque CNN handle.
pub struct GafEcgModel {
    inner: CnnModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Failure(GafEcgStatus, String);

impl Failure {
    fn new(status: GafEcgStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<CnnError> for Failure {
    fn from(e: CnnError) -> Self {
        let status = match e {
            CnnError::Checkpoint(_) => GafEcgStatus::Checkpoint,
            CnnError::Numerical(_) => GafEcgStatus::Numerical,
            CnnError::Config(_) | CnnError::Shape(_) => GafEcgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<GafError> for Failure {
    fn from(e: GafError) -> Self {
        let status = match e {
            GafError::DegenerateBeat(_) => GafEcgStatus::DegenerateInput,
            GafError::InvalidInput(_) => GafEcgStatus::InvalidArgument,
            GafError::Png { .. } => GafEcgStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<SignalError> for Failure {
    fn from(e: SignalError) -> Self {
        let status = match e {
            SignalError::DegenerateBeat(_) => GafEcgStatus::DegenerateInput,
            _ => GafEcgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<QrsError> for Failure {
    fn from(e: QrsError) -> Self {
        let status = match e {
            QrsError::UnsupportedRate(_) => GafEcgStatus::UnsupportedRate,
            QrsError::InvalidInput(_) => GafEcgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let status = match e {
            TrainError::UndefinedMetric { .. } => GafEcgStatus::UndefinedMetric,
            _ => GafEcgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GafEcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GafEcgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GafEcgStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(GafEcgStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts(ptr, len) })
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn output<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts_mut(ptr, len) })
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| Failure::new(GafEcgStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gaf_ecg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Creates a freshly initialized full-size network.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_model_new(seed: u64, out: *mut *mut GafEcgModel) -> GafEcgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = CnnModel::<f32>::init(NetConfig::standard(), seed)?;
        unsafe { *out = Box::into_raw(Box::new(GafEcgModel { inner })) };
        Ok(())
    })
}

/// Loads a checkpoint written by the training pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_model_load(path: *const c_char, out: *mut *mut GafEcgModel) -> GafEcgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = cnn::load_checkpoint::<f32>(unsafe { path_arg(path)? })?;
        unsafe { *out = Box::into_raw(Box::new(GafEcgModel { inner })) };
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_model_save(model: *const GafEcgModel, path: *const c_char) -> GafEcgStatus {
    guard(|| {
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        cnn::save_checkpoint(&model.inner, unsafe { path_arg(path)? })?;
        Ok(())
    })
}

/// Classifies one 128x128 image. Writes the two sigmoid scores (healthy, MI)
/// to `scores` and the predicted class (0 healthy, 1 MI) to `predicted_class`.
/// Safe to call concurrently on the same model.
///
/// # Safety
/// `pixels` valid for `len` reads, `scores` for 2 writes, `predicted_class`
/// for one write; `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_model_predict(
    model: *const GafEcgModel,
    pixels: *const u8,
    len: usize,
    scores: *mut f64,
    predicted_class: *mut i32,
) -> GafEcgStatus {
    guard(|| {
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        let pixels = unsafe { input(pixels, len, "pixels")? };
        let scores = unsafe { output(scores, GAF_ECG_CLASSES, "scores")? };
        if predicted_class.is_null() {
            return Err(null("predicted_class"));
        }
        if len != model.inner.config().input_size * model.inner.config().input_size {
            return Err(Failure::new(
                GafEcgStatus::InvalidArgument,
                format!("expected {} pixels, got {len}", GAF_ECG_IMAGE_PIXELS),
            ));
        }
        let p = model.inner.predict_pixels(pixels)?;
        scores.copy_from_slice(&p.class_scores);
        unsafe { *predicted_class = p.predicted_class.index() as i32 };
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_model_free(model: *mut GafEcgModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Encodes a beat (at least 128 samples; 651 in the standard pipeline) as an
/// 8-bit GASF or GADF image of `GAF_ECG_IMAGE_PIXELS` bytes.
///
/// # Safety
/// `beat` valid for `len` reads, `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_encode_beat(
    beat: *const f64,
    len: usize,
    kind: GafEcgKind,
    out: *mut u8,
    out_len: usize,
) -> GafEcgStatus {
    guard(|| {
        let beat = unsafe { input(beat, len, "beat")? };
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < GAF_ECG_IMAGE_PIXELS {
            return Err(Failure::new(
                GafEcgStatus::BufferTooSmall,
                format!("need {GAF_ECG_IMAGE_PIXELS} bytes, got {out_len}"),
            ));
        }
        if beat.iter().any(|v| !v.is_finite()) {
            return Err(Failure::new(GafEcgStatus::InvalidArgument, "beat has non-finite samples"));
        }
        let kind = match kind {
            GafEcgKind::Gasf => GafKind::Summation,
            GafEcgKind::Gadf => GafKind::Difference,
        };
        let matrix = gaf::series_to_matrix(beat, kind)?;
        let out = unsafe { output(out, GAF_ECG_IMAGE_PIXELS, "out")? };
        for (o, &v) in out.iter_mut().zip(&matrix.entries) {
            *o = gaf::quantize(v);
        }
        Ok(())
    })
}

/// Wavelet denoising (db4, 9 levels where the length allows). `out` receives
/// `len` samples and may alias `signal`.
///
/// # Safety
/// `signal` valid for `len` reads, `out` for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_denoise(signal: *const f64, len: usize, out: *mut f64) -> GafEcgStatus {
    guard(|| {
        let cleaned = signal::denoise_samples(unsafe { input(signal, len, "signal")? }, signal::DENOISE_LEVELS)?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { ptr::copy(cleaned.as_ptr(), out, len) };
        Ok(())
    })
}

/// Pan-Tompkins R-peak detection on a 1000 Hz signal. The number of peaks
/// is always written to `count`; if it exceeds `capacity` nothing is copied
/// and `GAF_ECG_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `signal` valid for `len` reads, `peaks` for `capacity` writes, `count`
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_pan_tompkins(
    signal: *const f64,
    len: usize,
    sampling_rate: f64,
    peaks: *mut usize,
    capacity: usize,
    count: *mut usize,
) -> GafEcgStatus {
    guard(|| {
        let samples = unsafe { input(signal, len, "signal")? }.to_vec();
        if count.is_null() {
            return Err(null("count"));
        }
        let record = EcgRecord::new("ffi", "ffi", Label::Healthy, "ii", samples, sampling_rate)
            .map_err(|e| Failure::new(GafEcgStatus::InvalidArgument, e.to_string()))?;
        let found = qrs::pan_tompkins(&record)?;
        unsafe { *count = found.indices.len() };
        if found.indices.len() > capacity {
            return Err(Failure::new(
                GafEcgStatus::BufferTooSmall,
                format!("{} peaks, capacity {capacity}", found.indices.len()),
            ));
        }
        if !found.indices.is_empty() {
            let dst = unsafe { output(peaks, found.indices.len(), "peaks")? };
            dst.copy_from_slice(&found.indices);
        }
        Ok(())
    })
}

/// Accuracy, sensitivity and specificity (percent) with MI as the positive class.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn gaf_ecg_metrics(
    tp: u64,
    tn: u64,
    fp: u64,
    fn_: u64,
    out: *mut GafEcgMetrics,
) -> GafEcgStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let m = gaf_ecg::train::compute_metrics(&ConfusionCounts::new(tp, tn, fp, fn_))?;
        *out = GafEcgMetrics {
            accuracy: m.accuracy,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
        };
        Ok(())
    })
}
