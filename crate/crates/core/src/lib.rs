//! Myocardial-infarction beat classification from lead-II ECG.
//!
//! The pipeline reads PTB-format records ([`wfdb`]), optionally removes noise and
//! baseline wander ([`signal`], [`wavelet`]), finds R peaks and cuts 651-sample
//! beats ([`qrs`]), turns each beat into a 128x128 Gramian angular field image
//! ([`gaf`]), and trains a small convolutional network ([`cnn`]) under k-fold
//! cross-validation ([`train`]). [`pipeline`] chains the stages through CSV
//! manifests on disk, which is what the `gaf-ecg` binary drives.

pub mod cnn;
pub mod gaf;
pub mod pipeline;
pub mod qrs;
pub mod signal;
pub mod synth;
pub mod train;
pub mod wavelet;
pub mod wfdb;

pub use cnn::{CnnModel, NetConfig, Prediction};
pub use gaf::{GafImage, GafKind};
pub use qrs::{Beat, RPeakList};
pub use train::{ConfusionCounts, Metrics};
pub use wfdb::{EcgRecord, Label, RecordHeader};
