//! Cardiotocography (CTG) analysis toolkit.
//!
//! The crate follows one patient record through a fixed chain of stages:
//!
//! * [`ingest`] parses paired FHR/UC traces and clinical metadata, and
//!   generates synthetic records with known ARMA dynamics.
//! * [`preprocess`] masks artifacts, interpolates short gaps and computes the
//!   signal-quality ratio.
//! * [`events`] estimates the FHR baseline and detects accelerations,
//!   decelerations and contractions.
//! * [`arma`] fits a windowed least-squares ARMA model of the FHR response to
//!   UC and derives pole-magnitude excursion features.
//! * [`features`] computes statistical/spectral/entropy features and assembles
//!   the nested feature sets FS1..FS4.
//! * [`labels`] assigns composite pH/Apgar outcome labels.
//! * [`ml`] holds normalization, logistic regression, SVM, cross-validation,
//!   metrics and feature selection.
//! * [`pipeline`] wires everything into reproducible, config-driven runs.

pub mod arma;
pub mod events;
pub mod features;
pub mod ingest;
pub mod labels;
pub mod ml;
pub mod pipeline;
pub mod preprocess;
pub mod render;
mod rolling;

/// Sampling rate of every CTG trace handled by this crate.
pub const SAMPLE_RATE_HZ: f64 = 4.0;

/// Converts a duration in seconds to a whole number of samples at 4 Hz.
pub fn seconds_to_samples(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE_HZ).round().max(0.0) as usize
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ingest: {0}")]
    Ingest(#[from] ingest::IngestError),
    #[error("preprocess: {0}")]
    Preprocess(#[from] preprocess::PreprocessError),
    #[error("events: {0}")]
    Events(#[from] events::EventsError),
    #[error("arma: {0}")]
    Arma(#[from] arma::ArmaError),
    #[error("features: {0}")]
    Features(#[from] features::FeatureError),
    #[error("ml: {0}")]
    Ml(#[from] ml::MlError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] pipeline::PipelineError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
