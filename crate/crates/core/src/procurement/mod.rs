//! Acquiring new labeled samples for a description set.
//!
//! Each description becomes one request per channel. Web-search and
//! text-to-image channels go through an [`ImageProvider`] plus an
//! [`Embedder`] that maps fetched images into the classifier's embedding
//! space. The synthetic channel skips both and samples embeddings directly
//! around the pivotal point.

mod cache;
mod provider;
mod synthetic;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{self, DataError, DatasetBundle, EmbeddingStore, Provenance, Record, Split};
use crate::prompt::{DescriptionSet, TextualDescription};

pub use cache::ProcurementCache;
pub use provider::{
    Embedder, FixtureEmbedder, FixtureProvider, HttpEmbedder, HttpProvider, ImageProvider, ProviderItem, RetryPolicy,
};
pub use synthetic::{procure_synthetic, SyntheticParams};

#[derive(Debug, Error)]
pub enum ProcurementError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("embedding has dimension {found}, pipeline expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("request {request_id} is for channel {actual}, not {expected}")]
    WrongChannel {
        request_id: String,
        expected: Channel,
        actual: Channel,
    },
    #[error("no client configured for channel {0}")]
    NoClient(Channel),
    #[error("no anchor vector for {0}")]
    MissingAnchor(String),
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Web,
    Txt2img,
    Synthetic,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Web => "web",
            Channel::Txt2img => "txt2img",
            Channel::Synthetic => "synthetic",
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            Channel::Web => Provenance::Web,
            Channel::Txt2img => Provenance::Txt2img,
            Channel::Synthetic => Provenance::Synthetic,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcurementRequest {
    pub request_id: String,
    pub description: TextualDescription,
    pub channel: Channel,
    pub count: usize,
    pub pivotal_id: Option<String>,
}

/// Content hash of (text, channel, count), hex encoded.
pub fn request_id(text: &str, channel: Channel, count: usize) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update([0u8]);
    h.update(channel.as_str().as_bytes());
    h.update([0u8]);
    h.update((count as u64).to_le_bytes());
    hex::encode(&h.finalize()[..16])
}

/// One request per (description, channel), deduplicated by request id.
pub fn plan(descriptions: &DescriptionSet, channels: &[Channel], per_count: usize) -> Vec<ProcurementRequest> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for d in &descriptions.entries {
        for &channel in channels {
            let id = request_id(&d.text, channel, per_count);
            if !seen.insert(id.clone()) {
                continue;
            }
            out.push(ProcurementRequest {
                request_id: id,
                description: d.clone(),
                channel,
                count: per_count,
                pivotal_id: d.pivotal_id.clone(),
            });
        }
    }
    out
}

/// Serializes requests as JSONL, one per line.
pub fn requests_to_jsonl(requests: &[ProcurementRequest]) -> String {
    requests
        .iter()
        .map(|r| serde_json::to_string(r).expect("request serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcuredBatch {
    pub request_id: String,
    pub channel: Channel,
    pub records: Vec<Record>,
    pub embeddings: EmbeddingStore,
    /// Source image reference per record; empty for the synthetic channel.
    pub image_refs: Vec<String>,
}

impl ProcuredBatch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bundle(&self) -> Result<DatasetBundle, DataError> {
        data::bind(self.embeddings.clone(), self.records.clone())
    }
}

pub(crate) fn procured_record(request: &ProcurementRequest, i: usize) -> Record {
    let mut r = Record::new(
        format!("{}-{i:04}", request.request_id),
        Split::Procured,
        request.description.target_class.clone(),
    );
    r.caption = Some(request.description.text.clone());
    r.provenance = request.channel.provenance();
    r
}

fn procure_external(
    request: &ProcurementRequest,
    expected: Channel,
    provider: &dyn ImageProvider,
    embedder: &dyn Embedder,
    dim: usize,
) -> Result<ProcuredBatch, ProcurementError> {
    if request.channel != expected {
        return Err(ProcurementError::WrongChannel {
            request_id: request.request_id.clone(),
            expected,
            actual: request.channel,
        });
    }
    let mut items = provider.generate(&request.description.text, request.count)?;
    items.truncate(request.count);
    let mut rows = Vec::with_capacity(items.len() * dim);
    let mut records = Vec::with_capacity(items.len());
    let mut refs = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let v = embedder.embed(&item.image_ref)?;
        if v.len() != dim {
            return Err(ProcurementError::DimMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        rows.extend_from_slice(&v);
        records.push(procured_record(request, i));
        refs.push(item.image_ref);
    }
    Ok(ProcuredBatch {
        request_id: request.request_id.clone(),
        channel: expected,
        records,
        embeddings: EmbeddingStore::new(dim, rows)?,
        image_refs: refs,
    })
}

/// Fetches images by web search and embeds them. Partial fulfillment is fine.
pub fn procure_web(
    request: &ProcurementRequest,
    provider: &dyn ImageProvider,
    embedder: &dyn Embedder,
    dim: usize,
) -> Result<ProcuredBatch, ProcurementError> {
    procure_external(request, Channel::Web, provider, embedder, dim)
}

pub fn procure_txt2img(
    request: &ProcurementRequest,
    provider: &dyn ImageProvider,
    embedder: &dyn Embedder,
    dim: usize,
) -> Result<ProcuredBatch, ProcurementError> {
    procure_external(request, Channel::Txt2img, provider, embedder, dim)
}

/// Resolves anchor vectors for the synthetic channel.
pub trait AnchorSource: Sync {
    fn pivotal(&self, id: &str) -> Option<Vec<f32>>;
    fn centroid(&self, class: &str) -> Option<Vec<f64>>;
}

/// Pivotals looked up in one bundle, class centroids taken from another.
pub struct BundleAnchors<'a> {
    pub pivots: &'a DatasetBundle,
    pub centroids: &'a DatasetBundle,
}

impl AnchorSource for BundleAnchors<'_> {
    fn pivotal(&self, id: &str) -> Option<Vec<f32>> {
        self.pivots.vector(id).map(<[f32]>::to_vec)
    }

    fn centroid(&self, class: &str) -> Option<Vec<f64>> {
        self.centroids.class_centroid(class)
    }
}

#[derive(Default)]
pub struct Clients<'a> {
    pub web: Option<&'a dyn ImageProvider>,
    pub txt2img: Option<&'a dyn ImageProvider>,
    pub embedder: Option<&'a dyn Embedder>,
    pub anchors: Option<&'a dyn AnchorSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestFailure {
    pub request_id: String,
    pub channel: Channel,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct Fulfillment {
    pub batches: Vec<ProcuredBatch>,
    pub failures: Vec<RequestFailure>,
    /// Provider `generate` calls made (cache hits make none).
    pub provider_calls: usize,
}

impl Fulfillment {
    pub fn record_count(&self) -> usize {
        self.batches.iter().map(ProcuredBatch::len).sum()
    }

    /// All procured samples as one bundle, in request order.
    pub fn to_bundle(&self, dim: usize) -> Result<DatasetBundle, DataError> {
        let mut acc = data::bind(EmbeddingStore::empty(dim)?, Vec::new())?;
        for b in &self.batches {
            acc = data::merge(&acc, &b.to_bundle()?)?;
        }
        Ok(acc)
    }
}

fn dispatch(
    request: &ProcurementRequest,
    clients: &Clients<'_>,
    params: &SyntheticParams,
    dim: usize,
) -> Result<ProcuredBatch, ProcurementError> {
    match request.channel {
        Channel::Web | Channel::Txt2img => {
            let provider = match request.channel {
                Channel::Web => clients.web,
                _ => clients.txt2img,
            }
            .ok_or(ProcurementError::NoClient(request.channel))?;
            let embedder = clients.embedder.ok_or(ProcurementError::NoClient(request.channel))?;
            procure_external(request, request.channel, provider, embedder, dim)
        }
        Channel::Synthetic => {
            let anchors = clients.anchors.ok_or(ProcurementError::NoClient(Channel::Synthetic))?;
            let class = &request.description.target_class;
            let centroid = anchors
                .centroid(class)
                .ok_or_else(|| ProcurementError::MissingAnchor(format!("class {class}")))?;
            // Mitigation prompts have no pivotal; they are anchored on the class centroid.
            let pivot = match &request.pivotal_id {
                Some(id) => anchors
                    .pivotal(id)
                    .ok_or_else(|| ProcurementError::MissingAnchor(format!("pivotal {id}")))?,
                None => centroid.iter().map(|&v| v as f32).collect(),
            };
            procure_synthetic(request, &pivot, &centroid, params)
        }
    }
}

/// Fulfills every request, consulting `cache` first. Failures are collected
/// per request and never abort the batch.
pub fn fulfill(
    requests: &[ProcurementRequest],
    clients: &Clients<'_>,
    params: &SyntheticParams,
    dim: usize,
    cache: &ProcurementCache,
) -> Fulfillment {
    let mut out = Fulfillment::default();
    for req in requests {
        let fingerprint = match req.channel {
            Channel::Synthetic => params.fingerprint(),
            _ => String::new(),
        };
        match cache.get(&req.request_id, &fingerprint) {
            Ok(Some(batch)) => {
                out.batches.push(batch);
                continue;
            }
            Ok(None) => {}
            Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", req.request_id),
        }
        if req.channel != Channel::Synthetic {
            out.provider_calls += 1;
        }
        match dispatch(req, clients, params, dim) {
            Ok(batch) => {
                if let Err(e) = cache.put(&batch, &fingerprint) {
                    log::warn!("could not cache {}: {e}", req.request_id);
                }
                out.batches.push(batch);
            }
            Err(e) => out.failures.push(RequestFailure {
                request_id: req.request_id.clone(),
                channel: req.channel,
                error: e.to_string(),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Purpose;

    fn desc(text: &str) -> TextualDescription {
        TextualDescription {
            text: text.into(),
            purpose: Purpose::Weakspot,
            target_class: "nurse".into(),
            pivotal_id: Some("p".into()),
            tags: vec![],
        }
    }

    #[test]
    fn plan_cardinality_and_dedup() {
        let set = DescriptionSet {
            entries: vec![desc("a"), desc("b"), desc("c")],
            skipped: vec![],
        };
        let reqs = plan(&set, &[Channel::Web, Channel::Txt2img], 5);
        assert_eq!(reqs.len(), 6);
        let dup = DescriptionSet {
            entries: vec![desc("a"), desc("a")],
            skipped: vec![],
        };
        assert_eq!(plan(&dup, &[Channel::Web], 5).len(), 1);
    }

    #[test]
    fn request_id_is_stable() {
        assert_eq!(request_id("x", Channel::Web, 3), request_id("x", Channel::Web, 3));
        assert_ne!(request_id("x", Channel::Web, 3), request_id("x", Channel::Txt2img, 3));
        assert_ne!(request_id("x", Channel::Web, 3), request_id("x", Channel::Web, 4));
        assert_eq!(
            request_id("a nurse with a potted plant", Channel::Synthetic, 20).len(),
            32
        );
    }

    #[test]
    fn jsonl_manifest() {
        let set = DescriptionSet {
            entries: vec![desc("a"), desc("b")],
            skipped: vec![],
        };
        let text = requests_to_jsonl(&plan(&set, &[Channel::Synthetic], 2));
        assert_eq!(text.lines().count(), 2);
        let back: ProcurementRequest = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.channel, Channel::Synthetic);
    }
}
