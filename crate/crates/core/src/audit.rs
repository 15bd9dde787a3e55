//! Weakspot detection over a classifier's embedding space.
//!
//! A weakspot is a misclassified reference point whose in-radius
//! neighborhood is dominated by points that are *correctly* classified as the
//! class the pivotal point was wrongly assigned to. The statistic used for
//! "dominated" is the local perplexity: the fraction of in-radius neighbors
//! that truly belong to the erroneous class and are predicted as such.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DatasetBundle, Record, Split};
use crate::index::{IndexError, Neighbor, NeighborIndex};

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("perplexity of an empty neighborhood is undefined")]
    NoNeighbors,
    #[error("no prediction for reference record {0:?}")]
    MissingPrediction(String),
    #[error("no ground truth for neighbor {0:?}")]
    UnknownRecord(String),
    #[error("grid needs at least one radius")]
    EmptyGrid,
    #[error("invalid audit config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub predicted_class: String,
    #[serde(default)]
    pub scores: Option<Vec<f64>>,
}

/// Which records feed the reference index and are scanned for pivotals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSet {
    Train,
    #[default]
    Test,
    All,
}

impl ReferenceSet {
    pub fn keeps(self, r: &Record) -> bool {
        match self {
            ReferenceSet::Train => r.split == Split::Train,
            ReferenceSet::Test => r.split == Split::Test,
            ReferenceSet::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    /// Neighbor cap applied before radius filtering.
    pub k: usize,
    /// Neighborhood radius in euclidean units.
    pub radius: f64,
    pub perplexity_threshold: f64,
    pub min_neighbors: usize,
    pub reference: ReferenceSet,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            k: 100,
            radius: 1.0,
            perplexity_threshold: 0.70,
            min_neighbors: 5,
            reference: ReferenceSet::Test,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), AuditError> {
        if !(0.0..=1.0).contains(&self.perplexity_threshold) {
            return Err(AuditError::InvalidConfig(format!(
                "perplexity_threshold {} outside [0,1]",
                self.perplexity_threshold
            )));
        }
        if !(self.radius >= 0.0) {
            return Err(AuditError::InvalidConfig(format!("radius {} < 0", self.radius)));
        }
        if self.k == 0 || self.min_neighbors == 0 {
            return Err(AuditError::InvalidConfig("k and min_neighbors must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weakspot {
    pub pivotal_id: String,
    pub true_class: String,
    pub predicted_class: String,
    pub radius: f64,
    pub perplexity: f64,
    pub neighbor_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub radius: f64,
    pub perplexity_threshold: f64,
    pub weakspot_count: usize,
    pub pivotal_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    pub fn count_at(&self, radius: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.radius == radius).map(|r| r.weakspot_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub true_class: String,
    pub predicted_class: String,
    pub count: usize,
    pub pivotal_ids: Vec<String>,
}

/// Id → label lookup over a prediction set.
pub fn prediction_map(predictions: &[Prediction]) -> HashMap<&str, &str> {
    predictions
        .iter()
        .map(|p| (p.id.as_str(), p.predicted_class.as_str()))
        .collect()
}

/// Fraction of `neighbors` whose truth and prediction both equal `erroneous_class`.
pub fn perplexity(
    neighbors: &[Neighbor],
    erroneous_class: &str,
    truth: &HashMap<&str, &str>,
    predictions: &HashMap<&str, &str>,
) -> Result<f64, AuditError> {
    if neighbors.is_empty() {
        return Err(AuditError::NoNeighbors);
    }
    let mut hits = 0usize;
    for n in neighbors {
        let t = truth
            .get(n.id.as_str())
            .ok_or_else(|| AuditError::UnknownRecord(n.id.clone()))?;
        let p = predictions
            .get(n.id.as_str())
            .ok_or_else(|| AuditError::MissingPrediction(n.id.clone()))?;
        if *t == erroneous_class && *p == erroneous_class {
            hits += 1;
        }
    }
    Ok(hits as f64 / neighbors.len() as f64)
}

/// Scans every misclassified reference record for a weakspot around it.
pub fn detect(
    bundle: &DatasetBundle,
    predictions: &[Prediction],
    index: &NeighborIndex,
    config: &AuditConfig,
) -> Result<Vec<Weakspot>, AuditError> {
    config.validate()?;
    let preds = prediction_map(predictions);
    let truth: HashMap<&str, &str> = bundle
        .records()
        .iter()
        .map(|r| (r.id.as_str(), r.true_class.as_str()))
        .collect();

    let mut misclassified = Vec::new();
    for (i, r) in bundle.records().iter().enumerate() {
        if !config.reference.keeps(r) {
            continue;
        }
        let p = preds
            .get(r.id.as_str())
            .ok_or_else(|| AuditError::MissingPrediction(r.id.clone()))?;
        if *p != r.true_class {
            misclassified.push((i, *p));
        }
    }

    let found: Vec<Option<Weakspot>> = misclassified
        .par_iter()
        .map(|&(i, predicted)| {
            let r = &bundle.records()[i];
            let hood = index.within_radius(bundle.store().row(i), config.radius, config.k, Some(&r.id))?;
            if hood.len() < config.min_neighbors {
                return Ok(None);
            }
            let perp = perplexity(&hood, predicted, &truth, &preds)?;
            if perp < config.perplexity_threshold {
                return Ok(None);
            }
            Ok(Some(Weakspot {
                pivotal_id: r.id.clone(),
                true_class: r.true_class.clone(),
                predicted_class: predicted.to_string(),
                radius: config.radius,
                perplexity: perp,
                neighbor_ids: hood.into_iter().map(|n| n.id).collect(),
            }))
        })
        .collect::<Result<_, AuditError>>()?;

    let mut out: Vec<Weakspot> = found.into_iter().flatten().collect();
    out.sort_by(|a, b| {
        b.perplexity
            .total_cmp(&a.perplexity)
            .then_with(|| a.pivotal_id.cmp(&b.pivotal_id))
    });
    Ok(out)
}

/// Weakspot counts swept over `radii` at a fixed perplexity threshold.
pub fn grid(
    bundle: &DatasetBundle,
    predictions: &[Prediction],
    index: &NeighborIndex,
    base: &AuditConfig,
    radii: &[f64],
    perplexity_threshold: f64,
) -> Result<GridReport, AuditError> {
    if radii.is_empty() {
        return Err(AuditError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in radii {
        let cfg = AuditConfig {
            radius,
            perplexity_threshold,
            ..base.clone()
        };
        let found = detect(bundle, predictions, index, &cfg)?;
        let mut pivotal_ids: Vec<String> = found.into_iter().map(|w| w.pivotal_id).collect();
        pivotal_ids.sort();
        rows.push(GridRow {
            radius,
            perplexity_threshold,
            weakspot_count: pivotal_ids.len(),
            pivotal_ids,
        });
    }
    Ok(GridReport { rows })
}

/// Groups weakspots by (true class, predicted class).
pub fn pair_summary(weakspots: &[Weakspot]) -> Vec<PairSummary> {
    let mut groups: BTreeMap<(&str, &str), Vec<String>> = BTreeMap::new();
    for w in weakspots {
        groups
            .entry((&w.true_class, &w.predicted_class))
            .or_default()
            .push(w.pivotal_id.clone());
    }
    groups
        .into_iter()
        .map(|((t, p), mut ids)| {
            ids.sort();
            PairSummary {
                true_class: t.to_string(),
                predicted_class: p.to_string(),
                count: ids.len(),
                pivotal_ids: ids,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{bind, EmbeddingStore};

    fn nb(ids: &[&str]) -> Vec<Neighbor> {
        ids.iter()
            .map(|id| Neighbor {
                id: id.to_string(),
                distance: 0.0,
            })
            .collect()
    }

    #[test]
    fn perplexity_ratio() {
        let ids: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let truth: HashMap<&str, &str> = refs.iter().map(|id| (*id, "b")).collect();
        let mut preds: HashMap<&str, &str> = refs.iter().map(|id| (*id, "b")).collect();
        preds.insert("n0", "a");
        preds.insert("n1", "a");
        assert_eq!(perplexity(&nb(&refs), "b", &truth, &preds).unwrap(), 0.8);
        assert_eq!(perplexity(&nb(&refs), "c", &truth, &preds).unwrap(), 0.0);
        assert_eq!(perplexity(&[], "b", &truth, &preds), Err(AuditError::NoNeighbors));
    }

    /// Pivotal "p" (truth a, predicted b) at the origin with `ring` neighbors
    /// of class b at distance 1.
    fn ring_fixture(ring: usize) -> (DatasetBundle, Vec<Prediction>) {
        let mut data = vec![0.0f32, 0.0];
        let mut recs = vec![Record::new("p", Split::Test, "a")];
        let mut preds = vec![Prediction {
            id: "p".into(),
            predicted_class: "b".into(),
            scores: None,
        }];
        for i in 0..ring {
            let t = i as f32 / ring as f32 * std::f32::consts::TAU;
            data.extend_from_slice(&[t.cos(), t.sin()]);
            recs.push(Record::new(format!("n{i}"), Split::Test, "b"));
            preds.push(Prediction {
                id: format!("n{i}"),
                predicted_class: "b".into(),
                scores: None,
            });
        }
        // a far-away correctly classified class-a cluster
        for i in 0..5 {
            data.extend_from_slice(&[50.0 + i as f32 * 0.1, 50.0]);
            recs.push(Record::new(format!("f{i}"), Split::Test, "a"));
            preds.push(Prediction {
                id: format!("f{i}"),
                predicted_class: "a".into(),
                scores: None,
            });
        }
        (bind(EmbeddingStore::new(2, data).unwrap(), recs).unwrap(), preds)
    }

    fn cfg(radius: f64) -> AuditConfig {
        AuditConfig {
            radius,
            ..AuditConfig::default()
        }
    }

    #[test]
    fn saturated_neighborhood_detected() {
        let (b, p) = ring_fixture(8);
        let idx = NeighborIndex::build(&b, |_| true);
        let ws = detect(&b, &p, &idx, &cfg(1.5)).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].pivotal_id, "p");
        assert_eq!(ws[0].perplexity, 1.0);
        assert_eq!(ws[0].neighbor_ids.len(), 8);
        assert!(!ws[0].neighbor_ids.contains(&"p".to_string()));
    }

    #[test]
    fn support_floor() {
        let (b, p) = ring_fixture(3);
        let idx = NeighborIndex::build(&b, |_| true);
        assert!(detect(&b, &p, &idx, &cfg(1.5)).unwrap().is_empty());
    }

    #[test]
    fn missing_prediction() {
        let (b, mut p) = ring_fixture(6);
        p.remove(0);
        let idx = NeighborIndex::build(&b, |_| true);
        assert_eq!(
            detect(&b, &p, &idx, &cfg(1.5)),
            Err(AuditError::MissingPrediction("p".into()))
        );
    }

    #[test]
    fn grid_row_matches_detect() {
        let (b, p) = ring_fixture(8);
        let idx = NeighborIndex::build(&b, |_| true);
        let g = grid(&b, &p, &idx, &AuditConfig::default(), &[0.5, 1.5], 0.7).unwrap();
        assert_eq!(g.rows.len(), 2);
        assert_eq!(g.rows[0].weakspot_count, 0);
        assert_eq!(g.rows[1].weakspot_count, detect(&b, &p, &idx, &cfg(1.5)).unwrap().len());
        assert_eq!(g.count_at(1.5), Some(1));
        assert_eq!(
            grid(&b, &p, &idx, &AuditConfig::default(), &[], 0.7),
            Err(AuditError::EmptyGrid)
        );
    }

    fn ws(id: &str, t: &str, p: &str) -> Weakspot {
        Weakspot {
            pivotal_id: id.into(),
            true_class: t.into(),
            predicted_class: p.into(),
            radius: 1.0,
            perplexity: 1.0,
            neighbor_ids: vec![],
        }
    }

    #[test]
    fn pair_grouping() {
        assert!(pair_summary(&[]).is_empty());
        let same = [ws("1", "a", "b"), ws("2", "a", "b"), ws("3", "a", "b")];
        let s = pair_summary(&same);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].count, 3);

        let mixed = [
            ws("1", "a", "b"),
            ws("2", "b", "a"),
            ws("3", "a", "b"),
            ws("4", "c", "a"),
            ws("5", "b", "a"),
        ];
        let s = pair_summary(&mixed);
        let count = |t: &str, p: &str| {
            mixed
                .iter()
                .filter(|w| w.true_class == t && w.predicted_class == p)
                .count()
        };
        assert_eq!(s.iter().map(|e| e.count).sum::<usize>(), mixed.len());
        for e in &s {
            assert_eq!(e.count, count(&e.true_class, &e.predicted_class));
        }
    }

    #[test]
    fn config_validation() {
        let bad = |c: AuditConfig| c.validate().is_err();
        assert!(bad(AuditConfig {
            perplexity_threshold: 1.2,
            ..AuditConfig::default()
        }));
        assert!(bad(AuditConfig {
            radius: -1.0,
            ..AuditConfig::default()
        }));
        assert!(bad(AuditConfig {
            radius: f64::NAN,
            ..AuditConfig::default()
        }));
        assert!(AuditConfig::default().validate().is_ok());
    }
}
