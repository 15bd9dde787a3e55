//! Accuracy and group-disparity evaluation. All rates are percentages.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Prediction;
use crate::data::Record;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no prediction for record {0:?}")]
    MissingPrediction(String),
    #[error("no records with {attribute}={value:?}")]
    UnknownGroup { attribute: String, value: String },
    #[error("baseline disparity must be positive, got {0}")]
    ZeroBaseline(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: usize,
    pub correct: usize,
    pub overall_accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub per_class_support: BTreeMap<String, usize>,
    /// attribute → value → accuracy; absent values have no entry.
    pub per_group_accuracy: BTreeMap<String, BTreeMap<String, f64>>,
    pub per_group_support: BTreeMap<String, BTreeMap<String, usize>>,
    /// Row = true class, column = predicted class, both indexed by `labels`.
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn group_accuracy(&self, attribute: &str, value: &str) -> Option<f64> {
        self.per_group_accuracy.get(attribute)?.get(value).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub attribute: String,
    pub group_a: String,
    pub group_b: String,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub disparity: f64,
}

fn percent(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

fn rates<K: Ord + Clone>(counts: &BTreeMap<K, (usize, usize)>) -> BTreeMap<K, f64> {
    counts.iter().map(|(k, &(h, n))| (k.clone(), percent(h, n))).collect()
}

pub fn evaluate(predictions: &[Prediction], records: &[Record]) -> Result<MetricsReport, MetricsError> {
    let by_id: HashMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.id.as_str(), p.predicted_class.as_str()))
        .collect();
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        let pred = by_id
            .get(r.id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(r.id.clone()))?;
        pairs.push((r, *pred));
    }

    let labels: Vec<String> = pairs
        .iter()
        .flat_map(|(r, p)| [r.true_class.as_str(), *p])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    let mut class_counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut group_counts: BTreeMap<String, BTreeMap<String, (usize, usize)>> = BTreeMap::new();
    let mut correct = 0;

    for (r, p) in &pairs {
        let hit = r.true_class == *p;
        correct += hit as usize;
        confusion[index[r.true_class.as_str()]][index[p]] += 1;
        let c = class_counts.entry(r.true_class.clone()).or_default();
        c.0 += hit as usize;
        c.1 += 1;
        for (attr, value) in &r.attributes {
            let g = group_counts
                .entry(attr.clone())
                .or_default()
                .entry(value.clone())
                .or_default();
            g.0 += hit as usize;
            g.1 += 1;
        }
    }

    Ok(MetricsReport {
        total: pairs.len(),
        correct,
        overall_accuracy: percent(correct, pairs.len()),
        per_class_accuracy: rates(&class_counts),
        per_class_support: class_counts.iter().map(|(k, v)| (k.clone(), v.1)).collect(),
        per_group_accuracy: group_counts.iter().map(|(k, v)| (k.clone(), rates(v))).collect(),
        per_group_support: group_counts
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|(g, c)| (g.clone(), c.1)).collect()))
            .collect(),
        labels,
        confusion,
    })
}

pub fn disparity_from_accuracies(accuracy_a: f64, accuracy_b: f64) -> f64 {
    (accuracy_a - accuracy_b).abs()
}

pub fn disparity(
    report: &MetricsReport,
    attribute: &str,
    group_a: &str,
    group_b: &str,
) -> Result<DisparityReport, MetricsError> {
    let lookup = |value: &str| {
        report
            .group_accuracy(attribute, value)
            .ok_or_else(|| MetricsError::UnknownGroup {
                attribute: attribute.to_string(),
                value: value.to_string(),
            })
    };
    let accuracy_a = lookup(group_a)?;
    let accuracy_b = lookup(group_b)?;
    Ok(DisparityReport {
        attribute: attribute.to_string(),
        group_a: group_a.to_string(),
        group_b: group_b.to_string(),
        accuracy_a,
        accuracy_b,
        disparity: disparity_from_accuracies(accuracy_a, accuracy_b),
    })
}

pub fn disparity_reduction(before: f64, after: f64) -> Result<f64, MetricsError> {
    if !(before > 0.0) {
        return Err(MetricsError::ZeroBaseline(before));
    }
    Ok(100.0 * (before - after) / before)
}
