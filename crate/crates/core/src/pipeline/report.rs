use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::audit::{AuditConfig, GridReport, PairSummary, Weakspot};
use crate::metrics::{DisparityReport, MetricsReport};
use crate::procurement::RequestFailure;
use crate::review::{Association, AssociationKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub audit: AuditConfig,
    pub baseline: MetricsReport,
    pub disparities: Vec<DisparityReport>,
    pub weakspots: Vec<Weakspot>,
    pub pairs: Vec<PairSummary>,
    pub grid: GridReport,
    pub associations: Vec<Association>,
    pub shortlist: Vec<AssociationKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityChange {
    pub before: DisparityReport,
    pub after: DisparityReport,
    /// Percent of the baseline gap removed; absent when there was no gap.
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcurementSummary {
    pub weakspot_descriptions: usize,
    pub mitigation_descriptions: usize,
    pub skipped_pivotals: Vec<String>,
    pub requests: usize,
    pub fulfilled_requests: usize,
    pub failures: Vec<RequestFailure>,
    pub procured_records: usize,
    pub train_records: usize,
    pub merged_records: usize,
    /// Procured records as a percentage of the original training set.
    pub augmentation_fraction: f64,
    /// Procured samples enter training unscreened; only count limits apply.
    pub screened: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub audit: AuditConfig,
    pub before: MetricsReport,
    pub after: MetricsReport,
    pub disparities: Vec<DisparityChange>,
    pub procurement: ProcurementSummary,
    pub grid_before: GridReport,
    pub grid_after: GridReport,
    pub weakspots_before: usize,
    pub weakspots_after: usize,
    pub weakspots_after_ids: Vec<String>,
}

impl EnhanceReport {
    pub fn accuracy_delta(&self) -> f64 {
        self.after.overall_accuracy - self.before.overall_accuracy
    }

    pub fn disparity_for(&self, attribute: &str) -> Option<&DisparityChange> {
        self.disparities.iter().find(|d| d.before.attribute == attribute)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::stage("write report", e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PipelineError::stage("write report", e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Missing(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::stage("read report", e))
}
