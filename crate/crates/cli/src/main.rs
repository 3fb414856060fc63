//! Command-line entry point: binds the library operations to files and flags.
//!
//! Exit codes: 0 on success, 2 on usage errors (handled by clap), 1 on
//! runtime or data errors, which are printed to stderr as a one-line cause.
//! Machine-readable outputs are written through a temp file and renamed into
//! place, so a failing run never leaves a partially-written artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distress_core::dataset::{self, SyntheticSpec};
use distress_core::gspca;
use distress_core::pipeline::{self, PipelineConfig, Selector, TrainedPipeline};

#[derive(Parser)]
#[command(
    name = "distress",
    about = "Financial distress prediction: grouped sparse-PCA feature selection + RVM classifier",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grouped dataset from a spec file.
    Gen {
        /// Synthetic spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for features.csv, groups.csv, truth.csv.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run feature selection on a full table and report per-group counts.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        /// Name of the label column in the features file.
        #[arg(long)]
        label: String,
        #[arg(long)]
        config: PathBuf,
        /// Selection report CSV (group,members,selected,fraction).
        #[arg(long, value_name = "PATH")]
        report_out: PathBuf,
    },
    /// Train the pipeline and write the model and evaluation report.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        label: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_name = "PATH")]
        model_out: PathBuf,
        #[arg(long, value_name = "PATH")]
        report_out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict probabilities and labels for new rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Predictions CSV (row_index,probability,label).
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Evaluate a trained model against labeled rows.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long, value_name = "PATH")]
        report_out: PathBuf,
    },
    /// Train all three selectors on the same split and compare reports.
    Compare {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long)]
        config: PathBuf,
        /// Comparison report JSON.
        #[arg(long, value_name = "PATH")]
        report_out: PathBuf,
    },
}

type CliResult<T> = Result<T, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Gen { spec, out, seed } => cmd_gen(&spec, &out, seed),
        Command::Select {
            features,
            groups,
            label,
            config,
            report_out,
        } => cmd_select(&features, &groups, &label, &config, &report_out),
        Command::Train {
            features,
            groups,
            label,
            config,
            model_out,
            report_out,
            seed,
        } => cmd_train(
            &features,
            groups.as_deref(),
            &label,
            &config,
            &model_out,
            &report_out,
            seed,
        ),
        Command::Predict {
            model,
            features,
            out,
        } => cmd_predict(&model, &features, &out),
        Command::Evaluate {
            model,
            features,
            label,
            report_out,
        } => cmd_evaluate(&model, &features, &label, &report_out),
        Command::Compare {
            features,
            groups,
            label,
            config,
            report_out,
        } => cmd_compare(&features, &groups, &label, &config, &report_out),
    }
}

/// Writes bytes through a sibling temp file and renames into place.
fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = parent.unwrap_or(Path::new("."));
    let context = |e: &dyn std::fmt::Display| format!("failed to write {}: {e}", path.display());
    let mut file = tempfile::NamedTempFile::new_in(dir).map_err(|e| context(&e))?;
    std::io::Write::write_all(&mut file, contents).map_err(|e| context(&e))?;
    file.persist(path).map_err(|e| context(&e))?;
    Ok(())
}

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("failed to read {what} {}: {e}", path.display()))?;
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut deserializer).map_err(|e| {
        let key_path = e.path().to_string();
        let location = if key_path == "." {
            String::new()
        } else {
            format!(" at {key_path}")
        };
        format!("{what} {}{location}: {}", path.display(), e.inner())
    })
}

/// Parses and validates a pipeline config; every field is optional and
/// unknown keys are rejected with the offending key named.
fn load_config(path: &Path) -> CliResult<PipelineConfig> {
    let config: PipelineConfig = parse_json_file(path, "config")?;
    config
        .validate()
        .map_err(|e| format!("config {}: {e}", path.display()))?;
    Ok(config)
}

fn load_table_or_fail(
    features: &Path,
    label: Option<&str>,
    groups: Option<&Path>,
) -> CliResult<(dataset::FeatureTable, Option<dataset::GroupMap>)> {
    dataset::load_table(features, label, groups).map_err(|e| e.to_string())
}

fn cmd_gen(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut spec: SyntheticSpec = parse_json_file(spec_path, "synthetic spec")?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (table, groups, truth) = dataset::generate_synthetic(&spec).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("failed to create {}: {e}", out_dir.display()))?;

    let mut features_csv = Vec::new();
    dataset::write_features_csv(&table, Some("label"), &mut features_csv)
        .map_err(|e| e.to_string())?;
    write_atomic(&out_dir.join("features.csv"), &features_csv)?;

    let mut groups_csv = Vec::new();
    dataset::write_groups_csv(&groups, &mut groups_csv).map_err(|e| e.to_string())?;
    write_atomic(&out_dir.join("groups.csv"), &groups_csv)?;

    let mut truth_csv = Vec::new();
    dataset::write_truth_csv(table.feature_names(), &truth, &mut truth_csv)
        .map_err(|e| e.to_string())?;
    write_atomic(&out_dir.join("truth.csv"), &truth_csv)?;

    println!(
        "generated {} rows x {} features in {} groups ({} informative) -> {}",
        table.n_rows(),
        table.n_features(),
        groups.len(),
        truth.iter().filter(|&&b| b).count(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_select(
    features: &Path,
    groups_path: &Path,
    label: &str,
    config_path: &Path,
    report_out: &Path,
) -> CliResult<()> {
    let config = load_config(config_path)?;
    let (table, groups) = load_table_or_fail(features, Some(label), Some(groups_path))?;
    let groups = groups.expect("groups path was supplied");
    let (std_table, params) = dataset::standardize(&table).map_err(|e| e.to_string())?;
    let retained: std::collections::HashSet<&str> = std_table
        .feature_names()
        .iter()
        .map(|s| s.as_str())
        .collect();
    let restricted = groups.restrict_to(&retained);

    let template = distress_core::spca::SpcaConfig {
        k: 1,
        lambda_ridge: config.lambda_ridge,
        lambda_lasso: vec![config.lambda_lasso],
        max_outer_iterations: config.spca_max_iterations,
        convergence_tolerance: config.spca_tolerance,
    };
    let result = match config.selector {
        Selector::Gspca => {
            gspca::gspca_select(&std_table, &restricted, config.per_group_components, &template)
                .map_err(|e| e.to_string())?
        }
        Selector::SpcaGlobal => {
            gspca::spca_global_select(&std_table, config.global_components, &template)
                .map_err(|e| e.to_string())?
        }
        Selector::None => {
            return Err("selector \"none\" performs no selection; nothing to report".to_string());
        }
    };
    write_atomic(report_out, gspca::selection_report_csv(&result).as_bytes())?;
    print!("{}", gspca::selection_report(&result));
    if !params.dropped_features.is_empty() {
        println!(
            "dropped zero-variance features: {}",
            params.dropped_features.join(", ")
        );
    }
    println!(
        "selected {} of {} features -> {}",
        result.merged_features.len(),
        std_table.n_features(),
        report_out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    features: &Path,
    groups_path: Option<&Path>,
    label: &str,
    config_path: &Path,
    model_out: &Path,
    report_out: &Path,
    seed: Option<u64>,
) -> CliResult<()> {
    let mut config = load_config(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let (table, groups) = load_table_or_fail(features, Some(label), groups_path)?;
    let (pipeline, report) =
        pipeline::train(&table, groups.as_ref(), &config).map_err(|e| e.to_string())?;
    pipeline::save_model(&pipeline, model_out).map_err(|e| e.to_string())?;
    let report_json =
        serde_json::to_string_pretty(&report).expect("report serialization is total");
    write_atomic(report_out, report_json.as_bytes())?;

    println!(
        "trained {} pipeline: {} features, {} relevance vectors, kernel width {}",
        config.selector,
        report.n_selected_features,
        report.n_relevance_vectors,
        pipeline.model.kernel.width
    );
    println!(
        "held-out: n={} accuracy={:.4} type1={} type2={}",
        report.n_test,
        report.accuracy,
        format_rate(report.type1_error),
        format_rate(report.type2_error)
    );
    println!("model -> {}", model_out.display());
    println!("report -> {}", report_out.display());
    Ok(())
}

fn format_rate(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{r:.4}"),
        None => "n/a".to_string(),
    }
}

/// Probability with 9 significant digits.
fn format_probability(p: f64) -> String {
    format!("{p:.8e}")
}

fn cmd_predict(model_path: &Path, features: &Path, out: &Path) -> CliResult<()> {
    let model = pipeline::load_model(model_path).map_err(|e| e.to_string())?;
    let (table, _) = load_table_or_fail(features, None, None)?;
    let predictions = pipeline::predict(&model, &table).map_err(|e| e.to_string())?;
    let mut csv = String::from("row_index,probability,label\n");
    for (i, (probability, label)) in predictions.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{label}", format_probability(*probability));
    }
    write_atomic(out, csv.as_bytes())?;
    let distressed = predictions.iter().filter(|(_, l)| *l == 1).count();
    println!(
        "predicted {} rows ({} distressed) -> {}",
        predictions.len(),
        distressed,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(
    model_path: &Path,
    features: &Path,
    label: &str,
    report_out: &Path,
) -> CliResult<()> {
    let model: TrainedPipeline = pipeline::load_model(model_path).map_err(|e| e.to_string())?;
    let (table, _) = load_table_or_fail(features, Some(label), None)?;
    let report = pipeline::evaluate(&model, &table).map_err(|e| e.to_string())?;
    let report_json =
        serde_json::to_string_pretty(&report).expect("report serialization is total");
    write_atomic(report_out, report_json.as_bytes())?;
    println!(
        "evaluated {} rows: accuracy={:.4} type1={} type2={} -> {}",
        report.n_test,
        report.accuracy,
        format_rate(report.type1_error),
        format_rate(report.type2_error),
        report_out.display()
    );
    Ok(())
}

fn cmd_compare(
    features: &Path,
    groups_path: &Path,
    label: &str,
    config_path: &Path,
    report_out: &Path,
) -> CliResult<()> {
    let config = load_config(config_path)?;
    let (table, groups) = load_table_or_fail(features, Some(label), Some(groups_path))?;
    let groups = groups.expect("groups path was supplied");
    let comparison =
        pipeline::compare_selectors(&table, &groups, &config).map_err(|e| e.to_string())?;
    let report_json =
        serde_json::to_string_pretty(&comparison).expect("report serialization is total");
    write_atomic(report_out, report_json.as_bytes())?;

    println!(
        "{:<12} {:>9} {:>8} {:>8} {:>10} {:>7}",
        "selector", "accuracy", "type1", "type2", "features", "rvs"
    );
    for row in &comparison {
        println!(
            "{:<12} {:>9.4} {:>8} {:>8} {:>10} {:>7}",
            row.selector.to_string(),
            row.report.accuracy,
            format_rate(row.report.type1_error),
            format_rate(row.report.type2_error),
            row.report.n_selected_features,
            row.report.n_relevance_vectors
        );
    }
    println!("report -> {}", report_out.display());
    Ok(())
}
