//! Calf behaviour classification from collar accelerometer windows.
//!
//! The crate covers the whole batch pipeline:
//!
//! * [`data`] and [`ingest`]: records, segments, fixed-length windows, CSV ingestion
//!   and channel derivation;
//! * [`preprocess`]: resampling to a fixed length and per-window standardisation;
//! * [`rocket`]: random-kernel and 84-kernel (MiniRocket) feature transforms;
//! * [`ridge`]: one-vs-rest ridge classification and calf-level grid search;
//! * [`splitter`]: stratified test/validation selection over whole calves;
//! * [`eval`]: confusion matrices and macro metrics;
//! * [`mlp`]: a small multilayer perceptron baseline;
//! * [`pipeline`]: manifest-driven experiments tying everything together.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod mlp;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod ridge;
pub mod rocket;
pub mod splitter;
pub mod synth;

pub use data::{Behaviour, Dataset, LabeledSegment, LabeledWindow};
pub use error::{Error, Result};
pub use rocket::FeatureMatrix;
