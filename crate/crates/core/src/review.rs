//! Object associations and the human review queue.
//!
//! Relevance of an object is the mean explainability-heatmap value over the
//! pixels of its segment. An object whose relevance clears the threshold in
//! an image associates that object with the class the image was predicted
//! as. Associations that touch a weakspot are queued for a human verdict;
//! the system never decides spuriousness on its own.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Weakspot;
use crate::data::Record;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("raster is {width}x{height} but holds {len} values")]
    BadRaster { width: usize, height: usize, len: usize },
    #[error("heatmap value {0} outside [0,1]")]
    HeatmapRange(f64),
    #[error("heatmap is {0:?} but mask is {1:?}")]
    DimMismatch((usize, usize), (usize, usize)),
    #[error("mask object id {0} has no label")]
    UnknownObjectId(u32),
    #[error("record {0:?} carries no object metadata")]
    MissingObjects(String),
    #[error("no prediction for record {0:?}")]
    MissingPrediction(String),
    #[error("no review item for ({0:?}, {1:?})")]
    UnknownKey(String, String),
    #[error("review state: {0}")]
    Json(#[from] serde_json::Error),
    #[error("review state io: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major 2-D grid. Heatmaps hold relevance in `[0,1]`; masks hold
/// object ids with 0 as background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

pub type Heatmap = Raster<f64>;
pub type SegmentMask = Raster<u32>;

impl<T> Raster<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Result<Self, ReviewError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(ReviewError::BadRaster {
                width,
                height,
                len: values.len(),
            });
        }
        Ok(Self { width, height, values })
    }

    fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRelevance {
    pub object_label: String,
    pub mean_relevance: f64,
    pub pixel_count: usize,
}

/// Mean heatmap value over each labeled segment, most relevant first.
pub fn object_relevance(
    heatmap: &Heatmap,
    mask: &SegmentMask,
    labels: &HashMap<u32, String>,
) -> Result<Vec<ObjectRelevance>, ReviewError> {
    if heatmap.values.len() != heatmap.width * heatmap.height {
        return Err(ReviewError::BadRaster {
            width: heatmap.width,
            height: heatmap.height,
            len: heatmap.values.len(),
        });
    }
    if heatmap.shape() != mask.shape() || mask.values.len() != heatmap.values.len() {
        return Err(ReviewError::DimMismatch(heatmap.shape(), mask.shape()));
    }
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&h, &m) in heatmap.values.iter().zip(&mask.values) {
        if !(0.0..=1.0).contains(&h) {
            return Err(ReviewError::HeatmapRange(h));
        }
        if m == 0 {
            continue;
        }
        let e = acc.entry(m).or_default();
        e.0 += h;
        e.1 += 1;
    }
    let mut out = Vec::with_capacity(acc.len());
    for (id, (sum, n)) in acc {
        let label = labels.get(&id).ok_or(ReviewError::UnknownObjectId(id))?;
        out.push(ObjectRelevance {
            object_label: label.clone(),
            mean_relevance: sum / n as f64,
            pixel_count: n,
        });
    }
    out.sort_by(|a, b| {
        b.mean_relevance
            .total_cmp(&a.mean_relevance)
            .then_with(|| a.object_label.cmp(&b.object_label))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssociationKey {
    pub object_label: String,
    pub predicted_class: String,
}

impl AssociationKey {
    pub fn new(object: impl Into<String>, class: impl Into<String>) -> Self {
        Self {
            object_label: object.into(),
            predicted_class: class.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub object_label: String,
    pub predicted_class: String,
    pub support: usize,
    pub mean_relevance: f64,
    pub evidence_ids: Vec<String>,
}

impl Association {
    pub fn key(&self) -> AssociationKey {
        AssociationKey::new(&self.object_label, &self.predicted_class)
    }
}

pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 0.5;

/// Object → predicted-class associations, highest support first.
pub fn mine(
    records: &[Record],
    predictions: &HashMap<&str, &str>,
    relevance_threshold: f64,
) -> Result<Vec<Association>, ReviewError> {
    // (object, class) -> evidence id -> relevance
    let mut groups: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in records {
        let objects = r
            .objects
            .as_ref()
            .ok_or_else(|| ReviewError::MissingObjects(r.id.clone()))?;
        let class = predictions
            .get(r.id.as_str())
            .ok_or_else(|| ReviewError::MissingPrediction(r.id.clone()))?;
        for o in objects.iter().filter(|o| o.relevance >= relevance_threshold) {
            let e = groups
                .entry((o.label.clone(), class.to_string()))
                .or_default()
                .entry(r.id.clone())
                .or_insert(o.relevance);
            // an object listed twice in one image counts once, at its best
            *e = e.max(o.relevance);
        }
    }
    let mut out: Vec<Association> = groups
        .into_iter()
        .map(|((object_label, predicted_class), evidence)| {
            let mean = evidence.values().sum::<f64>() / evidence.len() as f64;
            Association {
                object_label,
                predicted_class,
                support: evidence.len(),
                mean_relevance: mean,
                evidence_ids: evidence.into_keys().collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| b.support.cmp(&a.support).then_with(|| a.key().cmp(&b.key())));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    #[default]
    Pending,
    Spurious,
    Benign,
}

impl std::str::FromStr for Verdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(Verdict::Pending),
            "spurious" => Ok(Verdict::Spurious),
            "benign" => Ok(Verdict::Benign),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub verdict: Verdict,
    pub reviewer: String,
    /// Unix epoch milliseconds.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub key: AssociationKey,
    pub association: Association,
    pub verdict: Verdict,
    #[serde(default)]
    pub history: Vec<VerdictEntry>,
}

impl ReviewItem {
    /// Verdict implied by the history alone.
    pub fn replayed_verdict(&self) -> Verdict {
        self.history.last().map(|e| e.verdict).unwrap_or_default()
    }
}

/// Associations whose evidence touches a pivotal record or its neighborhood.
pub fn shortlist(associations: &[Association], weakspots: &[Weakspot]) -> Vec<ReviewItem> {
    let touched: HashSet<&str> = weakspots
        .iter()
        .flat_map(|w| std::iter::once(&w.pivotal_id).chain(&w.neighbor_ids))
        .map(String::as_str)
        .collect();
    associations
        .iter()
        .filter(|a| a.evidence_ids.iter().any(|id| touched.contains(id.as_str())))
        .map(|a| ReviewItem {
            key: a.key(),
            association: a.clone(),
            verdict: Verdict::Pending,
            history: Vec::new(),
        })
        .collect()
}

/// In-memory review queue, ordered as shortlisted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReviewQueue {
    items: Vec<ReviewItem>,
}

impl ReviewQueue {
    pub fn new(items: Vec<ReviewItem>) -> Self {
        Self { items }
    }

    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn get(&self, key: &AssociationKey) -> Option<&ReviewItem> {
        self.items.iter().find(|i| &i.key == key)
    }

    pub fn set_verdict(
        &mut self,
        key: &AssociationKey,
        verdict: Verdict,
        reviewer: &str,
    ) -> Result<&ReviewItem, ReviewError> {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.set_verdict_at(key, verdict, reviewer, now)
    }

    pub fn set_verdict_at(
        &mut self,
        key: &AssociationKey,
        verdict: Verdict,
        reviewer: &str,
        timestamp: u64,
    ) -> Result<&ReviewItem, ReviewError> {
        let item = self
            .items
            .iter_mut()
            .find(|i| &i.key == key)
            .ok_or_else(|| ReviewError::UnknownKey(key.object_label.clone(), key.predicted_class.clone()))?;
        item.history.push(VerdictEntry {
            verdict,
            reviewer: reviewer.to_string(),
            timestamp,
        });
        item.verdict = verdict;
        Ok(item)
    }

    /// Associations currently judged spurious.
    pub fn spurious(&self) -> Vec<Association> {
        self.items
            .iter()
            .filter(|i| i.verdict == Verdict::Spurious)
            .map(|i| i.association.clone())
            .collect()
    }

    /// Folds a fresh shortlist into the queue: evidence is refreshed for known
    /// keys, verdicts and history are kept, new keys are appended as pending.
    pub fn sync(&mut self, fresh: Vec<ReviewItem>) {
        let mut known: HashMap<AssociationKey, usize> = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.key.clone(), i))
            .collect();
        for item in fresh {
            match known.get(&item.key) {
                Some(&i) => self.items[i].association = item.association,
                None => {
                    known.insert(item.key.clone(), self.items.len());
                    self.items.push(item);
                }
            }
        }
    }

    pub fn filter(&self, verdict: Option<Verdict>) -> Vec<&ReviewItem> {
        self.items
            .iter()
            .filter(|i| verdict.is_none_or(|v| i.verdict == v))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReviewError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes the queue as a JSON array, replacing `path` atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReviewError> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, &self.items)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// File-backed queue with serialized writers.
#[derive(Debug)]
pub struct ReviewStore {
    path: PathBuf,
    queue: Mutex<ReviewQueue>,
}

impl ReviewStore {
    /// Opens `path`, starting empty if the file does not exist yet.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ReviewError> {
        let path = path.into();
        let queue = if path.exists() {
            ReviewQueue::load(&path)?
        } else {
            ReviewQueue::default()
        };
        Ok(Self {
            path,
            queue: Mutex::new(queue),
        })
    }

    pub fn snapshot(&self) -> ReviewQueue {
        self.queue.lock().unwrap().clone()
    }

    /// Records a verdict and persists before releasing the lock.
    pub fn set_verdict(
        &self,
        key: &AssociationKey,
        verdict: Verdict,
        reviewer: &str,
    ) -> Result<ReviewItem, ReviewError> {
        let mut q = self.queue.lock().unwrap();
        let mut next = q.clone();
        let item = next.set_verdict(key, verdict, reviewer)?.clone();
        next.save(&self.path)?;
        *q = next;
        Ok(item)
    }

    pub fn sync(&self, fresh: Vec<ReviewItem>) -> Result<(), ReviewError> {
        let mut q = self.queue.lock().unwrap();
        let mut next = q.clone();
        next.sync(fresh);
        next.save(&self.path)?;
        *q = next;
        Ok(())
    }
}

/// Evidence-id universe referenced by a set of weakspots, sorted.
pub fn weakspot_ids(weakspots: &[Weakspot]) -> BTreeSet<String> {
    weakspots
        .iter()
        .flat_map(|w| std::iter::once(w.pivotal_id.clone()).chain(w.neighbor_ids.iter().cloned()))
        .collect()
}
