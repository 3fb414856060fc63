//! End-to-end orchestration: split, standardize, select features, pick a
//! kernel width, train the classifier, evaluate on the held-out rows, and
//! persist the whole thing as one JSON document.
//!
//! Standardization statistics and the kernel width are derived from training
//! rows only; the held-out side never feeds back into them.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    self, DatasetError, FeatureStats, FeatureTable, GroupMap, StandardizationParams,
};
use crate::gspca::{self, GroupSelection, GroupSelectionResult, GspcaError, MethodTag};
use crate::par;
use crate::rvm::{
    self, CvSpec, CvTask, KernelFamily, KernelSpec, RvmError, RvmFitOptions, RvmMode, RvmModel,
};
use crate::spca::SpcaConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gspca(#[from] GspcaError),
    #[error(transparent)]
    Rvm(#[from] RvmError),
    #[error("labels are required for training and evaluation")]
    LabelsRequired,
    #[error("a group map is required when the selector is \"gspca\"")]
    GroupsRequired,
    #[error("selector removed all features")]
    EmptySelection,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("cannot evaluate an empty table")]
    EmptyTable,
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    WriteFile {
        path: String,
        source: std::io::Error,
    },
    #[error("unsupported model format version {found} (supported: {supported})")]
    VersionMismatch { found: i64, supported: u32 },
    #[error("model file schema violation at {path}: {message}")]
    Schema { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Feature-selection strategy applied before the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Gspca,
    SpcaGlobal,
    None,
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Selector::Gspca => "gspca",
            Selector::SpcaGlobal => "spca_global",
            Selector::None => "none",
        })
    }
}

/// Every knob of the pipeline. All fields have defaults, so an empty JSON
/// document is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub selector: Selector,
    pub per_group_components: usize,
    pub global_components: usize,
    pub lambda_ridge: f64,
    pub lambda_lasso: f64,
    pub spca_max_iterations: usize,
    pub spca_tolerance: f64,
    pub kernel_family: KernelFamily,
    pub width_grid: Vec<f64>,
    pub loo_cutoff: usize,
    pub k_folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            selector: Selector::Gspca,
            per_group_components: 1,
            global_components: 4,
            lambda_ridge: 1e-4,
            lambda_lasso: 0.1,
            spca_max_iterations: 200,
            spca_tolerance: 1e-6,
            kernel_family: KernelFamily::Gaussian,
            width_grid: vec![0.01, 0.1, 1.0],
            loo_cutoff: 200,
            k_folds: 10,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(PipelineError::BadConfig(message));
        if self.width_grid.is_empty() {
            return bad("width_grid: must be non-empty".into());
        }
        if let Some(w) = self.width_grid.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return bad(format!("width_grid: widths must be positive and finite, got {w}"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction: must lie strictly in (0,1), got {}",
                self.test_fraction
            ));
        }
        if self.per_group_components == 0 {
            return bad("per_group_components: must be at least 1".into());
        }
        if self.global_components == 0 {
            return bad("global_components: must be at least 1".into());
        }
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !non_negative(self.lambda_ridge) {
            return bad(format!("lambda_ridge: must be >= 0, got {}", self.lambda_ridge));
        }
        if !non_negative(self.lambda_lasso) {
            return bad(format!("lambda_lasso: must be >= 0, got {}", self.lambda_lasso));
        }
        if self.spca_max_iterations == 0 {
            return bad("spca_max_iterations: must be at least 1".into());
        }
        if !(self.spca_tolerance > 0.0) {
            return bad(format!(
                "spca_tolerance: must be positive, got {}",
                self.spca_tolerance
            ));
        }
        if self.k_folds < 2 {
            return bad(format!("k_folds: must be at least 2, got {}", self.k_folds));
        }
        Ok(())
    }

    fn spca_template(&self) -> SpcaConfig {
        SpcaConfig {
            k: 1,
            lambda_ridge: self.lambda_ridge,
            lambda_lasso: vec![self.lambda_lasso],
            max_outer_iterations: self.spca_max_iterations,
            convergence_tolerance: self.spca_tolerance,
        }
    }

    fn cv_spec(&self) -> CvSpec {
        CvSpec {
            loo_cutoff: self.loo_cutoff,
            k_folds: self.k_folds,
        }
    }
}

/// Everything needed to classify new rows, plus creation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub standardization: StandardizationParams,
    pub selection: GroupSelectionResult,
    pub model: RvmModel,
    pub config: PipelineConfig,
    pub format_version: u32,
    pub created_unix: u64,
}

/// Confusion counts with positive = distressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Held-out metrics. Type I is distressed-predicted-healthy, Type II is
/// healthy-predicted-distressed; a rate whose denominator is zero is `None`,
/// never 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub accuracy: f64,
    pub type1_error: Option<f64>,
    pub type2_error: Option<f64>,
    pub confusion: Confusion,
    pub n_selected_features: usize,
    pub n_relevance_vectors: usize,
}

fn report_from_counts(
    confusion: Confusion,
    n_selected_features: usize,
    n_relevance_vectors: usize,
) -> EvaluationReport {
    let Confusion { tp, fp, tn, fn_ } = confusion;
    let n_test = tp + fp + tn + fn_;
    let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    EvaluationReport {
        n_test,
        accuracy: (tp + tn) as f64 / n_test as f64,
        type1_error: rate(fn_, tp + fn_),
        type2_error: rate(fp, tn + fp),
        confusion,
        n_selected_features,
        n_relevance_vectors,
    }
}

fn select_features(
    train_std: &FeatureTable,
    groups: Option<&GroupMap>,
    config: &PipelineConfig,
) -> Result<GroupSelectionResult> {
    let template = config.spca_template();
    let selection = match config.selector {
        Selector::Gspca => {
            let groups = groups.ok_or(PipelineError::GroupsRequired)?;
            let retained: HashSet<&str> = train_std
                .feature_names()
                .iter()
                .map(|s| s.as_str())
                .collect();
            let restricted = groups.restrict_to(&retained);
            gspca::gspca_select(
                train_std,
                &restricted,
                config.per_group_components,
                &template,
            )?
        }
        Selector::SpcaGlobal => {
            gspca::spca_global_select(train_std, config.global_components, &template)?
        }
        Selector::None => GroupSelectionResult {
            per_group: vec![GroupSelection {
                group_name: "ALL".to_string(),
                member_count: train_std.n_features(),
                selected_feature_names: train_std.feature_names().to_vec(),
                first_component_loadings: vec![],
            }],
            merged_features: train_std.feature_names().to_vec(),
            method_tag: MethodTag::None,
        },
    };
    if selection.merged_features.is_empty() {
        return Err(PipelineError::EmptySelection);
    }
    Ok(selection)
}

fn creation_timestamp() -> u64 {
    // SOURCE_DATE_EPOCH makes model files byte-reproducible when callers
    // need that.
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        return epoch;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Trains the full pipeline on a labeled table and reports held-out metrics.
pub fn train(
    table: &FeatureTable,
    groups: Option<&GroupMap>,
    config: &PipelineConfig,
) -> Result<(TrainedPipeline, EvaluationReport)> {
    config.validate()?;
    if table.labels().is_none() {
        return Err(PipelineError::LabelsRequired);
    }
    let (train_table, test_table) = dataset::split(table, config.test_fraction, config.seed)?;
    let (train_std, standardization) = dataset::standardize(&train_table)?;
    let selection = select_features(&train_std, groups, config)?;

    let selected = train_std.select_columns(&selection.merged_features)?;
    let labels = selected.labels().expect("labels survive projection").to_vec();
    let opts = RvmFitOptions::default();
    let (kernel, _scores) = rvm::select_kernel_width(
        selected.values(),
        CvTask::Classification(&labels),
        config.kernel_family,
        &config.width_grid,
        &config.cv_spec(),
        &opts,
    )?;
    let (model, _diagnostics) =
        rvm::fit_classification(selected.values(), &labels, &kernel, &opts)?;

    let pipeline = TrainedPipeline {
        standardization,
        selection,
        model,
        config: config.clone(),
        format_version: MODEL_FORMAT_VERSION,
        created_unix: creation_timestamp(),
    };
    let report = evaluate(&pipeline, &test_table)?;
    Ok((pipeline, report))
}

/// Per-row (probability, label) with label 1 iff probability >= 0.5.
pub fn predict(pipeline: &TrainedPipeline, raw: &FeatureTable) -> Result<Vec<(f64, u8)>> {
    let standardized = dataset::apply_standardization(raw, &pipeline.standardization)?;
    let projected = standardized.select_columns(&pipeline.selection.merged_features)?;
    let probabilities = rvm::predict_proba(&pipeline.model, projected.values())?;
    Ok(probabilities
        .iter()
        .map(|&p| (p, u8::from(p >= 0.5)))
        .collect())
}

/// Confusion counts and rates of the pipeline on a labeled table.
pub fn evaluate(pipeline: &TrainedPipeline, labeled: &FeatureTable) -> Result<EvaluationReport> {
    let labels = labeled.labels().ok_or(PipelineError::LabelsRequired)?;
    if labeled.n_rows() == 0 {
        return Err(PipelineError::EmptyTable);
    }
    let predictions = predict(pipeline, labeled)?;
    let mut confusion = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&truth, &(_, predicted)) in labels.iter().zip(&predictions) {
        match (truth, predicted) {
            (1, 1) => confusion.tp += 1,
            (1, 0) => confusion.fn_ += 1,
            (0, 0) => confusion.tn += 1,
            (0, 1) => confusion.fp += 1,
            _ => unreachable!("labels validated as binary"),
        }
    }
    Ok(report_from_counts(
        confusion,
        pipeline.selection.merged_features.len(),
        pipeline.model.n_relevance_vectors(),
    ))
}

/// One row of the selector comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorComparison {
    pub selector: Selector,
    pub report: EvaluationReport,
}

/// Trains once per selector on the same split and seed and returns the
/// aligned report table.
pub fn compare_selectors(
    table: &FeatureTable,
    groups: &GroupMap,
    config: &PipelineConfig,
) -> Result<Vec<SelectorComparison>> {
    config.validate()?;
    let selectors = [Selector::Gspca, Selector::SpcaGlobal, Selector::None];
    let runs = par::map_slice(&selectors, |&selector| {
        let run_config = PipelineConfig {
            selector,
            ..config.clone()
        };
        let (_, report) = train(table, Some(groups), &run_config)?;
        Ok::<SelectorComparison, PipelineError>(SelectorComparison { selector, report })
    });
    runs.into_iter().collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureStatsDoc {
    mean: f64,
    sd: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionDoc {
    method_tag: MethodTag,
    merged_features: Vec<String>,
    per_group: Vec<GroupSelection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelDoc {
    family: KernelFamily,
    width: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RvmDoc {
    mode: RvmMode,
    relevance_vectors: Vec<Vec<f64>>,
    weights: Vec<f64>,
    bias_retained: bool,
    alphas: Vec<f64>,
    noise_variance: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format_version: u32,
    #[serde(default)]
    created_unix: u64,
    standardization: BTreeMap<String, FeatureStatsDoc>,
    dropped_features: Vec<String>,
    selection: SelectionDoc,
    kernel: KernelDoc,
    rvm: RvmDoc,
    config: PipelineConfig,
}

impl ModelDocument {
    fn from_pipeline(pipeline: &TrainedPipeline) -> Self {
        let standardization = pipeline
            .standardization
            .retained
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    FeatureStatsDoc {
                        mean: s.mean,
                        sd: s.sd,
                    },
                )
            })
            .collect();
        let model = &pipeline.model;
        let relevance_vectors = (0..model.relevance_vectors.nrows())
            .map(|i| model.relevance_vectors.row(i).iter().copied().collect())
            .collect();
        Self {
            format_version: pipeline.format_version,
            created_unix: pipeline.created_unix,
            standardization,
            dropped_features: pipeline.standardization.dropped_features.clone(),
            selection: SelectionDoc {
                method_tag: pipeline.selection.method_tag,
                merged_features: pipeline.selection.merged_features.clone(),
                per_group: pipeline.selection.per_group.clone(),
            },
            kernel: KernelDoc {
                family: pipeline.model.kernel.family,
                width: pipeline.model.kernel.width,
            },
            rvm: RvmDoc {
                mode: model.mode,
                relevance_vectors,
                weights: model.weights.iter().copied().collect(),
                bias_retained: model.bias_retained,
                alphas: model.alphas.iter().copied().collect(),
                noise_variance: model.noise_variance,
            },
            config: pipeline.config.clone(),
        }
    }

    fn into_pipeline(self, path: &str) -> Result<TrainedPipeline> {
        let schema_error = |message: String| PipelineError::Schema {
            path: path.to_string(),
            message,
        };
        let dim = self.selection.merged_features.len();
        let n_rv = self.rvm.relevance_vectors.len();
        for (i, row) in self.rvm.relevance_vectors.iter().enumerate() {
            if row.len() != dim {
                return Err(schema_error(format!(
                    "rvm.relevance_vectors[{i}] has {} entries, expected {dim}",
                    row.len()
                )));
            }
        }
        let expected_weights = n_rv + usize::from(self.rvm.bias_retained);
        if self.rvm.weights.len() != expected_weights {
            return Err(schema_error(format!(
                "rvm.weights has {} entries, expected {expected_weights}",
                self.rvm.weights.len()
            )));
        }
        if self.rvm.alphas.len() != expected_weights {
            return Err(schema_error(format!(
                "rvm.alphas has {} entries, expected {expected_weights}",
                self.rvm.alphas.len()
            )));
        }
        for feature in &self.selection.merged_features {
            if !self.standardization.contains_key(feature) {
                return Err(schema_error(format!(
                    "selection.merged_features names {feature:?}, absent from standardization"
                )));
            }
        }
        let kernel = KernelSpec::new(self.kernel.family, self.kernel.width)?;
        let relevance_vectors = DMatrix::from_fn(n_rv, dim, |i, j| {
            self.rvm.relevance_vectors[i][j]
        });
        let retained = self
            .standardization
            .into_iter()
            .map(|(name, stats)| FeatureStats {
                name,
                mean: stats.mean,
                sd: stats.sd,
            })
            .collect();
        Ok(TrainedPipeline {
            standardization: StandardizationParams {
                retained,
                dropped_features: self.dropped_features,
            },
            selection: GroupSelectionResult {
                per_group: self.selection.per_group,
                merged_features: self.selection.merged_features,
                method_tag: self.selection.method_tag,
            },
            model: RvmModel {
                mode: self.rvm.mode,
                kernel,
                relevance_vectors,
                weights: DVector::from_vec(self.rvm.weights),
                bias_retained: self.rvm.bias_retained,
                alphas: DVector::from_vec(self.rvm.alphas),
                noise_variance: self.rvm.noise_variance,
            },
            config: self.config,
            format_version: self.format_version,
            created_unix: self.created_unix,
        })
    }
}

/// Serializes the pipeline to the versioned JSON schema, writing through a
/// sibling temp file so a failed write never leaves a partial model.
pub fn save_model(pipeline: &TrainedPipeline, path: &Path) -> Result<()> {
    let document = ModelDocument::from_pipeline(pipeline);
    let json =
        serde_json::to_string_pretty(&document).expect("model document serialization is total");
    let write_error = |source: std::io::Error| PipelineError::WriteFile {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json.as_bytes()).map_err(write_error)?;
    std::fs::rename(&tmp, path).map_err(write_error)?;
    Ok(())
}

/// Loads and validates a persisted pipeline. Version mismatches and schema
/// violations are reported with the offending field path.
pub fn load_model(path: &Path) -> Result<TrainedPipeline> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Read {
        path: display.clone(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| PipelineError::Schema {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_i64())
        .ok_or_else(|| PipelineError::Schema {
            path: display.clone(),
            message: "format_version missing or not an integer".to_string(),
        })?;
    if version != i64::from(MODEL_FORMAT_VERSION) {
        return Err(PipelineError::VersionMismatch {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    let document: ModelDocument = serde_path_to_error::deserialize(&mut deserializer)
        .map_err(|e| PipelineError::Schema {
            path: format!("{display}: {}", e.path()),
            message: e.inner().to_string(),
        })?;
    document.into_pipeline(&display)
}
