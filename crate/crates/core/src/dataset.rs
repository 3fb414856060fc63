//! Tabular ingestion, standardization, stratified splitting, and synthetic
//! data generation.
//!
//! All operations are pure: they take immutable inputs and return new tables,
//! so callers may share them freely across threads.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write: {0}")]
    Write(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("empty file: no header row")]
    EmptyHeader,
    #[error("duplicate feature name {name:?} in header")]
    DuplicateFeature { name: String },
    #[error("ragged row at data row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-numeric cell at row {row}, column {column}")]
    NonNumericCell { row: usize, column: String },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("label column {column:?} not found in header")]
    LabelColumnMissing { column: String },
    #[error("label value {value:?} at row {row} is outside {{0,1}}")]
    InvalidLabel { row: usize, value: String },
    #[error("labels are required for this operation")]
    LabelsRequired,
    #[error("groups file must have header \"feature,group\", found {found:?}")]
    BadGroupsHeader { found: String },
    #[error("group map references unknown feature {feature:?}")]
    UnknownGroupFeature { feature: String },
    #[error("group map lists feature {feature:?} more than once")]
    DuplicateGroupFeature { feature: String },
    #[error("group map omits features: {}", missing.join(", "))]
    GroupMapOmitsFeatures { missing: Vec<String> },
    #[error("group {name:?} is empty")]
    EmptyGroup { name: String },
    #[error("duplicate group name {name:?}")]
    DuplicateGroup { name: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("standardization requires at least 2 rows, got {n}")]
    TooFewRows { n: usize },
    #[error("no informative features (all columns have zero deviation)")]
    NoInformativeFeatures,
    #[error("feature {name:?} required by standardization is absent from the table")]
    MissingFeature { name: String },
    #[error("test fraction must lie strictly in (0,1), got {value}")]
    BadTestFraction { value: f64 },
    #[error("class {label} has fewer than 2 members ({count})")]
    ClassTooSmall { label: u8, count: usize },
    #[error("invalid synthetic spec: {reason}")]
    InvalidSpec { reason: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// An n×m indicator matrix with named columns and optional binary labels
/// (1 = distressed, 0 = healthy).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    feature_names: Vec<String>,
    values: DMatrix<f64>,
    labels: Option<Vec<u8>>,
}

impl FeatureTable {
    /// Validates names, shapes, finiteness, and label encoding.
    pub fn new(
        feature_names: Vec<String>,
        values: DMatrix<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if feature_names.len() != values.ncols() {
            return Err(DatasetError::Shape(format!(
                "{} feature names but {} matrix columns",
                feature_names.len(),
                values.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::DuplicateFeature { name: name.clone() });
            }
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(DatasetError::NonFinite {
                        row: i + 1,
                        column: feature_names[j].clone(),
                    });
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != values.nrows() {
                return Err(DatasetError::Shape(format!(
                    "{} labels but {} rows",
                    labels.len(),
                    values.nrows()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(DatasetError::InvalidLabel {
                    row: labels.iter().position(|l| l == bad).unwrap() + 1,
                    value: bad.to_string(),
                });
            }
        }
        Ok(Self {
            feature_names,
            values,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Projects onto `names` in the given order. Errors on the first missing
    /// feature.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureTable> {
        let mut cols = Vec::with_capacity(names.len());
        for name in names {
            match self.column_index(name) {
                Some(j) => cols.push(j),
                None => {
                    return Err(DatasetError::MissingFeature { name: name.clone() });
                }
            }
        }
        let values = DMatrix::from_fn(self.n_rows(), cols.len(), |i, j| self.values[(i, cols[j])]);
        Ok(FeatureTable {
            feature_names: names.to_vec(),
            values,
            labels: self.labels.clone(),
        })
    }

    /// New table holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        let values = DMatrix::from_fn(rows.len(), self.n_features(), |i, j| {
            self.values[(rows[i], j)]
        });
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        FeatureTable {
            feature_names: self.feature_names.clone(),
            values,
            labels,
        }
    }
}

/// A named group of features; the paper-style statement-analysis categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub members: Vec<String>,
}

/// An ordered partition of a table's features into named groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMap {
    groups: Vec<Group>,
}

impl GroupMap {
    /// Checks that groups are non-empty, pairwise disjoint, and uniquely named.
    /// Exactness against a table is a separate check, [`GroupMap::validate_for`].
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        let mut group_names = HashSet::new();
        let mut members = HashSet::new();
        for group in &groups {
            if group.members.is_empty() {
                return Err(DatasetError::EmptyGroup {
                    name: group.name.clone(),
                });
            }
            if !group_names.insert(group.name.as_str()) {
                return Err(DatasetError::DuplicateGroup {
                    name: group.name.clone(),
                });
            }
            for member in &group.members {
                if !members.insert(member.as_str()) {
                    return Err(DatasetError::DuplicateGroupFeature {
                        feature: member.clone(),
                    });
                }
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Name of the group containing `feature`, if any.
    pub fn group_of(&self, feature: &str) -> Option<&str> {
        self.groups
            .iter()
            .find(|g| g.members.iter().any(|m| m == feature))
            .map(|g| g.name.as_str())
    }

    /// Verifies the partition is exact over `feature_names`: every member
    /// exists, every feature is covered, nothing is duplicated.
    pub fn validate_for(&self, feature_names: &[String]) -> Result<()> {
        let table: HashSet<&str> = feature_names.iter().map(|s| s.as_str()).collect();
        let mut covered = HashSet::new();
        for group in &self.groups {
            for member in &group.members {
                if !table.contains(member.as_str()) {
                    return Err(DatasetError::UnknownGroupFeature {
                        feature: member.clone(),
                    });
                }
                covered.insert(member.as_str());
            }
        }
        let missing: Vec<String> = feature_names
            .iter()
            .filter(|f| !covered.contains(f.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(DatasetError::GroupMapOmitsFeatures { missing });
        }
        Ok(())
    }

    /// Drops members not in `keep` (and groups that become empty). Used after
    /// zero-variance columns are removed by standardization.
    pub fn restrict_to(&self, keep: &HashSet<&str>) -> GroupMap {
        let groups = self
            .groups
            .iter()
            .filter_map(|g| {
                let members: Vec<String> = g
                    .members
                    .iter()
                    .filter(|m| keep.contains(m.as_str()))
                    .cloned()
                    .collect();
                (!members.is_empty()).then(|| Group {
                    name: g.name.clone(),
                    members,
                })
            })
            .collect();
        GroupMap { groups }
    }
}

/// Per-feature z-score statistics from a training table. Deviations use the
/// population convention (divisor n).
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationParams {
    pub retained: Vec<FeatureStats>,
    pub dropped_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Synthetic-data recipe: one latent factor per group, linear label model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub group_specs: Vec<GroupSpec>,
    pub label_coefficients: Vec<f64>,
    #[serde(default)]
    pub label_intercept: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub n_features: usize,
    pub n_informative: usize,
    pub factor_loading: f64,
    pub feature_noise_sd: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(DatasetError::InvalidSpec { reason });
        if self.n_samples == 0 {
            return fail("n_samples must be positive".into());
        }
        if self.group_specs.is_empty() {
            return fail("at least one group is required".into());
        }
        if self.label_coefficients.len() != self.group_specs.len() {
            return fail(format!(
                "label_coefficients has {} entries but there are {} groups",
                self.label_coefficients.len(),
                self.group_specs.len()
            ));
        }
        let mut names = HashSet::new();
        for g in &self.group_specs {
            if g.name.is_empty() {
                return fail("group names must be non-empty".into());
            }
            if !names.insert(g.name.as_str()) {
                return fail(format!("duplicate group name {:?}", g.name));
            }
            if g.n_features == 0 {
                return fail(format!("group {:?} has no features", g.name));
            }
            if g.n_informative > g.n_features {
                return fail(format!(
                    "group {:?}: n_informative {} exceeds n_features {}",
                    g.name, g.n_informative, g.n_features
                ));
            }
            if !(g.feature_noise_sd >= 0.0) {
                return fail(format!(
                    "group {:?}: feature_noise_sd must be >= 0",
                    g.name
                ));
            }
            if !g.factor_loading.is_finite() {
                return fail(format!("group {:?}: factor_loading must be finite", g.name));
            }
        }
        if self.label_coefficients.iter().any(|c| !c.is_finite())
            || !self.label_intercept.is_finite()
        {
            return fail("label coefficients and intercept must be finite".into());
        }
        Ok(())
    }
}

fn map_csv_error(err: csv::Error, header_len: usize) -> DatasetError {
    if let csv::ErrorKind::UnequalLengths { pos, len, .. } = err.kind() {
        // csv reports the record line; data rows start at line 2.
        let row = pos
            .as_ref()
            .map(|p| p.line().saturating_sub(1) as usize)
            .unwrap_or(0);
        return DatasetError::RaggedRow {
            row,
            expected: header_len,
            found: *len as usize,
        };
    }
    DatasetError::Csv(err.to_string())
}

/// Reads a features CSV (and optionally a groups CSV), returning the table
/// with the label column split out.
pub fn load_table(
    features_path: &Path,
    label_column: Option<&str>,
    groups_path: Option<&Path>,
) -> Result<(FeatureTable, Option<GroupMap>)> {
    let file = std::fs::File::open(features_path).map_err(|source| DatasetError::Read {
        path: features_path.display().to_string(),
        source,
    })?;
    let table = read_features_csv(file, label_column)?;
    let groups = match groups_path {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|source| DatasetError::Read {
                path: path.display().to_string(),
                source,
            })?;
            let map = read_groups_csv(file)?;
            map.validate_for(table.feature_names())?;
            Some(map)
        }
        None => None,
    };
    Ok((table, groups))
}

/// Parses a features CSV from any reader. Columns keep file order; the label
/// column (if named) is removed from the features.
pub fn read_features_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DatasetError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DatasetError::EmptyHeader);
    }
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(DatasetError::DuplicateFeature { name: h.clone() });
        }
    }
    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            DatasetError::LabelColumnMissing {
                column: name.to_string(),
            }
        })?),
        None => None,
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| map_csv_error(e, headers.len()))?;
        let row_no = r + 1;
        if record.len() != headers.len() {
            return Err(DatasetError::RaggedRow {
                row: row_no,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let value: f64 = cell.parse().map_err(|_| DatasetError::NonNumericCell {
                row: row_no,
                column: headers[j].clone(),
            })?;
            if Some(j) == label_idx {
                if value == 0.0 {
                    labels.push(0);
                } else if value == 1.0 {
                    labels.push(1);
                } else {
                    return Err(DatasetError::InvalidLabel {
                        row: row_no,
                        value: cell.to_string(),
                    });
                }
            } else {
                if !value.is_finite() {
                    return Err(DatasetError::NonFinite {
                        row: row_no,
                        column: headers[j].clone(),
                    });
                }
                row.push(value);
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let m = feature_names.len();
    let values = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
    FeatureTable::new(feature_names, values, label_idx.map(|_| labels))
}

/// Parses a `feature,group` CSV into a GroupMap, groups ordered by first
/// appearance.
pub fn read_groups_csv<R: Read>(reader: R) -> Result<GroupMap> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::Csv(e.to_string()))?
        .clone();
    let header_fields: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
    if header_fields != ["feature", "group"] {
        return Err(DatasetError::BadGroupsHeader {
            found: header_fields.join(","),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut members: HashMap<String, Vec<String>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| map_csv_error(e, 2))?;
        let feature = record.get(0).unwrap_or("").trim().to_string();
        let group = record.get(1).unwrap_or("").trim().to_string();
        if !members.contains_key(&group) {
            order.push(group.clone());
        }
        members.entry(group).or_default().push(feature);
    }
    let groups = order
        .into_iter()
        .map(|name| {
            let members = members.remove(&name).unwrap();
            Group { name, members }
        })
        .collect();
    GroupMap::new(groups)
}

/// Writes a features CSV; `label_name` adds the label column at the end.
pub fn write_features_csv<W: Write>(
    table: &FeatureTable,
    label_name: Option<&str>,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = table.feature_names().to_vec();
    if let Some(name) = label_name {
        header.push(name.to_string());
    }
    wtr.write_record(&header)
        .map_err(|e| DatasetError::Csv(e.to_string()))?;
    let labels = table.labels();
    for i in 0..table.n_rows() {
        let mut record: Vec<String> = (0..table.n_features())
            .map(|j| table.values()[(i, j)].to_string())
            .collect();
        if label_name.is_some() {
            let label = labels.map(|l| l[i]).unwrap_or(0);
            record.push(label.to_string());
        }
        wtr.write_record(&record)
            .map_err(|e| DatasetError::Csv(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes a `feature,group` CSV.
pub fn write_groups_csv<W: Write>(map: &GroupMap, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["feature", "group"])
        .map_err(|e| DatasetError::Csv(e.to_string()))?;
    for group in map.groups() {
        for member in &group.members {
            wtr.write_record([member.as_str(), group.name.as_str()])
                .map_err(|e| DatasetError::Csv(e.to_string()))?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Writes a `feature,informative` CSV from a generator truth mask.
pub fn write_truth_csv<W: Write>(
    feature_names: &[String],
    truth_mask: &[bool],
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["feature", "informative"])
        .map_err(|e| DatasetError::Csv(e.to_string()))?;
    for (name, &informative) in feature_names.iter().zip(truth_mask) {
        wtr.write_record([name.as_str(), if informative { "1" } else { "0" }])
            .map_err(|e| DatasetError::Csv(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Z-scores every column with population (divisor-n) deviation. Constant
/// columns are dropped and recorded.
pub fn standardize(table: &FeatureTable) -> Result<(FeatureTable, StandardizationParams)> {
    let n = table.n_rows();
    if n < 2 {
        return Err(DatasetError::TooFewRows { n });
    }
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in table.feature_names().iter().enumerate() {
        let col = table.values().column(j);
        let min = col.min();
        let max = col.max();
        if min == max {
            dropped.push(name.clone());
            continue;
        }
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            dropped.push(name.clone());
            continue;
        }
        retained.push(FeatureStats {
            name: name.clone(),
            mean,
            sd,
        });
    }
    if retained.is_empty() {
        return Err(DatasetError::NoInformativeFeatures);
    }
    let params = StandardizationParams {
        retained,
        dropped_features: dropped,
    };
    let standardized = apply_standardization(table, &params)?;
    Ok((standardized, params))
}

/// Applies training-set statistics to a (possibly new) table. Output columns
/// follow the params' retained order; dropped features are removed.
pub fn apply_standardization(
    table: &FeatureTable,
    params: &StandardizationParams,
) -> Result<FeatureTable> {
    let mut cols = Vec::with_capacity(params.retained.len());
    for stats in &params.retained {
        match table.column_index(&stats.name) {
            Some(j) => cols.push(j),
            None => {
                return Err(DatasetError::MissingFeature {
                    name: stats.name.clone(),
                });
            }
        }
    }
    let values = DMatrix::from_fn(table.n_rows(), cols.len(), |i, j| {
        let stats = &params.retained[j];
        (table.values()[(i, cols[j])] - stats.mean) / stats.sd
    });
    FeatureTable::new(
        params.retained.iter().map(|s| s.name.clone()).collect(),
        values,
        table.labels.clone(),
    )
}

/// Stratified train/test split, deterministic for a given seed. Per stratum
/// the test share is `round(count * test_fraction)`, clamped so both sides
/// keep at least one member.
pub fn split(
    table: &FeatureTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(FeatureTable, FeatureTable)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::BadTestFraction {
            value: test_fraction,
        });
    }
    let labels = table.labels().ok_or(DatasetError::LabelsRequired)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_rows: Vec<usize> = Vec::new();
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(DatasetError::ClassTooSmall {
                label: class,
                count: members.len(),
            });
        }
        let n_test = ((members.len() as f64 * test_fraction).round() as usize)
            .clamp(1, members.len() - 1);
        // Fisher-Yates over the stratum, then take the head.
        for i in (1..members.len()).rev() {
            let j = rng.random_range(0..=i);
            members.swap(i, j);
        }
        test_rows.extend_from_slice(&members[..n_test]);
    }
    test_rows.sort_unstable();
    let test_set: HashSet<usize> = test_rows.iter().copied().collect();
    let train_rows: Vec<usize> = (0..table.n_rows())
        .filter(|i| !test_set.contains(i))
        .collect();
    Ok((table.select_rows(&train_rows), table.select_rows(&test_rows)))
}

/// Draws a grouped latent-factor table: per group g a latent z_g ~ N(0,1) per
/// sample, informative features = loading*z_g + noise, pure-noise features
/// ~ N(0,1), labels ~ Bernoulli(sigmoid(intercept + sum coef_g * z_g)).
///
/// Returns the table, the group map, and a truth mask marking informative
/// columns.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FeatureTable, GroupMap, Vec<bool>)> {
    spec.validate()?;
    let n = spec.n_samples;
    let m: usize = spec.group_specs.iter().map(|g| g.n_features).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;

    let mut values = DMatrix::<f64>::zeros(n, m);
    let mut feature_names = Vec::with_capacity(m);
    let mut truth_mask = Vec::with_capacity(m);
    let mut groups = Vec::with_capacity(spec.group_specs.len());
    let mut label_score = vec![spec.label_intercept; n];

    let mut col = 0;
    for (g_idx, g) in spec.group_specs.iter().enumerate() {
        let z: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let coef = spec.label_coefficients[g_idx];
        for (score, zi) in label_score.iter_mut().zip(&z) {
            *score += coef * zi;
        }
        let mut members = Vec::with_capacity(g.n_features);
        for f in 0..g.n_features {
            let name = format!("{}_{}", g.name, f + 1);
            let informative = f < g.n_informative;
            for i in 0..n {
                let noise: f64 = normal.sample(&mut rng);
                values[(i, col)] = if informative {
                    g.factor_loading * z[i] + g.feature_noise_sd * noise
                } else {
                    noise
                };
            }
            members.push(name.clone());
            feature_names.push(name);
            truth_mask.push(informative);
            col += 1;
        }
        groups.push(Group {
            name: g.name.clone(),
            members,
        });
    }

    let labels: Vec<u8> = label_score
        .iter()
        .map(|&s| {
            let p = 1.0 / (1.0 + (-s).exp());
            u8::from(rng.random::<f64>() < p)
        })
        .collect();

    let table = FeatureTable::new(feature_names, values, Some(labels))?;
    let map = GroupMap::new(groups)?;
    Ok((table, map, truth_mask))
}
