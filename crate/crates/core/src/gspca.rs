//! Grouped feature selection: run SPCA inside each feature group and merge
//! the surviving features, or run one global SPCA over everything as the
//! comparison strategy.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureTable, GroupMap};
use crate::par;
use crate::spca::{self, SpcaConfig, SpcaError};

#[derive(Debug, Error)]
pub enum GspcaError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Spca(#[from] SpcaError),
    #[error("group {name:?} has {size} features, fewer than {components} requested components")]
    GroupTooSmall {
        name: String,
        size: usize,
        components: usize,
    },
}

pub type Result<T> = std::result::Result<T, GspcaError>;

/// Which selection strategy produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Gspca,
    SpcaGlobal,
    None,
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MethodTag::Gspca => "gspca",
            MethodTag::SpcaGlobal => "spca_global",
            MethodTag::None => "none",
        };
        f.write_str(s)
    }
}

/// Outcome of selection within one group (or the "ALL" pseudo-group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub group_name: String,
    pub member_count: usize,
    pub selected_feature_names: Vec<String>,
    /// First-component loading per member, in member order.
    pub first_component_loadings: Vec<f64>,
}

/// Merged outcome across groups. `merged_features` is the deduplicated union
/// of per-group selections in the table's column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelectionResult {
    pub per_group: Vec<GroupSelection>,
    pub merged_features: Vec<String>,
    pub method_tag: MethodTag,
}

impl GroupSelectionResult {
    /// Number of distinct groups with at least one selected feature.
    pub fn groups_touched(&self, groups: &GroupMap) -> usize {
        let touched: HashSet<&str> = self
            .merged_features
            .iter()
            .filter_map(|f| groups.group_of(f))
            .collect();
        touched.len()
    }
}

fn merge_in_table_order(table: &FeatureTable, selected: &HashSet<String>) -> Vec<String> {
    table
        .feature_names()
        .iter()
        .filter(|name| selected.contains(name.as_str()))
        .cloned()
        .collect()
}

/// Runs SPCA with `per_group_components` components inside every group and
/// keeps the features with a nonzero loading in any of those components.
/// The template supplies penalties and budgets; its first L1 value is shared
/// by all components of every group.
pub fn gspca_select(
    table: &FeatureTable,
    groups: &GroupMap,
    per_group_components: usize,
    config_template: &SpcaConfig,
) -> Result<GroupSelectionResult> {
    groups.validate_for(table.feature_names())?;
    for group in groups.groups() {
        if group.members.len() < per_group_components {
            return Err(GspcaError::GroupTooSmall {
                name: group.name.clone(),
                size: group.members.len(),
                components: per_group_components,
            });
        }
    }
    let config = config_template.with_components(per_group_components);
    // Per-group fits touch disjoint column submatrices; run them in parallel.
    let fits = par::map_slice(groups.groups(), |group| -> Result<GroupSelection> {
        let sub = table.select_columns(&group.members)?;
        let fit = spca::spca_fit(sub.values(), &config)?;
        let selected = spca::selected_features(&fit, per_group_components)?;
        Ok(GroupSelection {
            group_name: group.name.clone(),
            member_count: group.members.len(),
            selected_feature_names: selected
                .iter()
                .map(|&j| group.members[j].clone())
                .collect(),
            first_component_loadings: fit.loadings.column(0).iter().copied().collect(),
        })
    });
    let mut per_group = Vec::with_capacity(fits.len());
    let mut selected = HashSet::new();
    for fit in fits {
        let selection = fit?;
        selected.extend(selection.selected_feature_names.iter().cloned());
        per_group.push(selection);
    }
    Ok(GroupSelectionResult {
        per_group,
        merged_features: merge_in_table_order(table, &selected),
        method_tag: MethodTag::Gspca,
    })
}

/// One SPCA over all features; keeps everything with a nonzero coefficient
/// among the first `components` components.
pub fn spca_global_select(
    table: &FeatureTable,
    components: usize,
    config_template: &SpcaConfig,
) -> Result<GroupSelectionResult> {
    let config = config_template.with_components(components);
    let fit = spca::spca_fit(table.values(), &config)?;
    let selected_idx = spca::selected_features(&fit, components)?;
    let names: Vec<String> = selected_idx
        .iter()
        .map(|&j| table.feature_names()[j].clone())
        .collect();
    let per_group = vec![GroupSelection {
        group_name: "ALL".to_string(),
        member_count: table.n_features(),
        selected_feature_names: names.clone(),
        first_component_loadings: fit.loadings.column(0).iter().copied().collect(),
    }];
    Ok(GroupSelectionResult {
        per_group,
        merged_features: names,
        method_tag: MethodTag::SpcaGlobal,
    })
}

/// Fraction rounded to 3 decimals with trailing zeros trimmed (at least one
/// decimal digit kept), e.g. 3/40 -> "0.075", 3/21 -> "0.143", 0/5 -> "0.0".
fn format_fraction(selected: usize, members: usize) -> String {
    let fraction = if members == 0 {
        0.0
    } else {
        selected as f64 / members as f64
    };
    let mut s = format!("{:.3}", fraction);
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    s
}

fn report_rows(result: &GroupSelectionResult) -> Vec<(String, usize, usize, String)> {
    let mut rows: Vec<(String, usize, usize, String)> = result
        .per_group
        .iter()
        .map(|g| {
            let selected = g.selected_feature_names.len();
            (
                g.group_name.clone(),
                g.member_count,
                selected,
                format_fraction(selected, g.member_count),
            )
        })
        .collect();
    let members: usize = result.per_group.iter().map(|g| g.member_count).sum();
    let selected = result.merged_features.len();
    rows.push((
        "TOTAL".to_string(),
        members,
        selected,
        format_fraction(selected, members),
    ));
    rows
}

/// Plain-text per-group summary, one row per group plus a totals row.
pub fn selection_report(result: &GroupSelectionResult) -> String {
    let mut out = String::from("group, members, selected, fraction\n");
    for (name, members, selected, fraction) in report_rows(result) {
        out.push_str(&format!("{name}, {members}, {selected}, {fraction}\n"));
    }
    out
}

/// Same summary as `group,members,selected,fraction` CSV.
pub fn selection_report_csv(result: &GroupSelectionResult) -> String {
    let mut out = String::from("group,members,selected,fraction\n");
    for (name, members, selected, fraction) in report_rows(result) {
        out.push_str(&format!("{name},{members},{selected},{fraction}\n"));
    }
    out
}
