//! Financial distress prediction from grouped financial indicators.
//!
//! The library chains three stages:
//!
//! 1. [`dataset`] — ingestion, z-score standardization, stratified splitting,
//!    and a latent-factor synthetic generator for desk-scale experiments.
//! 2. [`spca`] / [`gspca`] — sparse principal component analysis solved as an
//!    elastic-net penalized regression, applied either globally or within each
//!    feature group, with the surviving features merged into a reduced table.
//! 3. [`rvm`] / [`pipeline`] — a relevance vector machine (sparse Bayesian
//!    kernel learner) trained on the selected features, wrapped in an
//!    end-to-end pipeline with evaluation metrics and JSON persistence.
//!
//! Heavy inner loops (per-group fits, cross-validation grids, selector
//! comparison) run on rayon when the default `parallel` feature is enabled;
//! disabling it falls back to equivalent sequential loops with identical
//! results.

pub mod dataset;
pub mod gspca;
pub mod pipeline;
pub mod rvm;
pub mod spca;

mod par;

pub use dataset::{FeatureTable, GroupMap, StandardizationParams, SyntheticSpec};
pub use gspca::GroupSelectionResult;
pub use pipeline::{EvaluationReport, PipelineConfig, TrainedPipeline};
pub use rvm::{KernelSpec, RvmModel, TrainDiagnostics};
pub use spca::{SpcaConfig, SpcaLoadings};
