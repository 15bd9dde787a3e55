//! Canonical data model: embedding stores, per-record metadata, and bundles
//! that bind the two together.
//!
//! Embeddings live in the WSEM binary format (16-byte header followed by
//! little-endian `f32` rows). Metadata lives in a JSONL manifest where line
//! `i` describes row `i`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WSEM_MAGIC: &[u8; 4] = b"WSEM";
pub const WSEM_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected \"WSEM\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported WSEM version {0}")]
    BadVersion(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("row buffer of {len} values is not a multiple of dim {dim}")]
    RaggedRows { len: usize, dim: usize },
    #[error("store has {rows} rows but {records} records were supplied")]
    LengthMismatch { rows: usize, records: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record at position {0} has an empty id")]
    EmptyId(usize),
    #[error("record {id:?}: object {label:?} relevance {relevance} outside [0,1]")]
    InvalidRelevance { id: String, label: String, relevance: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("augmentation base count must be positive")]
    ZeroBase,
    #[error("manifest line {line}: {source}")]
    Manifest {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

/// A dense `count × dim` matrix of finite `f32` embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::ZeroDim);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(DataError::RaggedRows { len: data.len(), dim });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self, DataError> {
        Self::new(dim, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self, DataError> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(DataError::DimMismatch {
                    left: dim,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Encodes the store in WSEM layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(WSEM_MAGIC);
        out.extend_from_slice(&WSEM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != WSEM_MAGIC {
                return Err(DataError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(DataError::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != WSEM_MAGIC {
            return Err(DataError::BadMagic(magic));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != WSEM_VERSION {
            return Err(DataError::BadVersion(version));
        }
        let count = word(8) as usize;
        let dim = word(12) as usize;
        if dim == 0 {
            return Err(DataError::ZeroDim);
        }
        let payload = &bytes[HEADER_LEN..];
        let expected = count * dim * 4;
        if payload.len() < expected {
            return Err(DataError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(DataError::TrailingBytes(payload.len() - expected));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dim, data)
    }

    /// Concatenates rows of `other` after `self`.
    pub fn concat(&self, other: &EmbeddingStore) -> Result<Self, DataError> {
        if self.dim != other.dim {
            return Err(DataError::DimMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { dim: self.dim, data })
    }

    /// Selects the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { dim: self.dim, data }
    }
}

pub fn load_embedding_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, DataError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    EmbeddingStore::from_bytes(&bytes)
}

pub fn save_embedding_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), DataError> {
    // Stores built through `new` are always finite; re-check in case of a
    // future unchecked constructor so nothing invalid reaches disk.
    if let Some(pos) = store.data.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFiniteValue {
            row: pos / store.dim,
            col: pos % store.dim,
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&store.to_bytes())?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Procured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Web,
    Txt2img,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Indoor,
    Outdoor,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub environment: Environment,
    #[serde(default)]
    pub venue: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub label: String,
    pub relevance: f64,
}

/// Per-row metadata. Line `i` of a manifest pairs with row `i` of the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub split: Split,
    pub true_class: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub scene: Option<Scene>,
    #[serde(default)]
    pub objects: Option<Vec<DetectedObject>>,
    pub provenance: Provenance,
}

impl Record {
    pub fn new(id: impl Into<String>, split: Split, true_class: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            split,
            true_class: true_class.into(),
            attributes: BTreeMap::new(),
            caption: None,
            scene: None,
            objects: None,
            provenance: Provenance::Original,
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Record>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| DataError::Manifest { line: n + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_manifest(records: &[Record], path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Ordered set of class labels; position is the class index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassVocabulary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassVocabulary {
    /// Builds a vocabulary keeping first appearances; later duplicates are dropped.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::default();
        for l in labels {
            vocab.push(l.into());
        }
        vocab
    }

    /// Appends `label` if absent and returns its position.
    pub fn push(&mut self, label: String) -> usize {
        if let Some(&i) = self.index.get(&label) {
            return i;
        }
        let i = self.labels.len();
        self.index.insert(label.clone(), i);
        self.labels.push(label);
        i
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Union with `other`, keeping this vocabulary's order first.
    pub fn union(&self, other: &ClassVocabulary) -> Self {
        let mut out = self.clone();
        for l in &other.labels {
            out.push(l.clone());
        }
        out
    }
}

impl Serialize for ClassVocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.labels.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClassVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(d)?;
        let vocab = Self::from_labels(labels.iter().cloned());
        if vocab.len() != labels.len() {
            return Err(serde::de::Error::custom("duplicate label in vocabulary"));
        }
        Ok(vocab)
    }
}

/// Embeddings bound to their records. Immutable once built.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    store: EmbeddingStore,
    records: Vec<Record>,
    vocabulary: ClassVocabulary,
    positions: HashMap<String, usize>,
}

/// Validates and binds `records` to `store`. The vocabulary follows the
/// order in which classes first appear.
pub fn bind(store: EmbeddingStore, records: Vec<Record>) -> Result<DatasetBundle, DataError> {
    if store.count() != records.len() {
        return Err(DataError::LengthMismatch {
            rows: store.count(),
            records: records.len(),
        });
    }
    let mut positions = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.id.is_empty() {
            return Err(DataError::EmptyId(i));
        }
        if positions.insert(r.id.clone(), i).is_some() {
            return Err(DataError::DuplicateId(r.id.clone()));
        }
        for o in r.objects.iter().flatten() {
            if !(0.0..=1.0).contains(&o.relevance) {
                return Err(DataError::InvalidRelevance {
                    id: r.id.clone(),
                    label: o.label.clone(),
                    relevance: o.relevance,
                });
            }
        }
    }
    let vocabulary = ClassVocabulary::from_labels(records.iter().map(|r| r.true_class.clone()));
    Ok(DatasetBundle {
        store,
        records,
        vocabulary,
        positions,
    })
}

impl DatasetBundle {
    pub fn load(store: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<Self, DataError> {
        bind(load_embedding_store(store)?, load_manifest(manifest)?)
    }

    pub fn save(&self, store: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<(), DataError> {
        save_embedding_store(&self.store, store)?;
        save_manifest(&self.records, manifest)
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn record(&self, id: &str) -> Option<&Record> {
        self.position(id).map(|i| &self.records[i])
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.store.row(i))
    }

    /// Sub-bundle of the records matching `keep`, in original order.
    pub fn filter(&self, keep: impl Fn(&Record) -> bool) -> DatasetBundle {
        let rows: Vec<usize> = (0..self.records.len()).filter(|&i| keep(&self.records[i])).collect();
        let records = rows.iter().map(|&i| self.records[i].clone()).collect();
        bind(self.store.select(&rows), records).expect("subset of a valid bundle is valid")
    }

    /// Mean embedding (in `f64`) of every record whose true class is `class`.
    pub fn class_centroid(&self, class: &str) -> Option<Vec<f64>> {
        let mut sum = vec![0.0f64; self.dim()];
        let mut n = 0usize;
        for (r, row) in self.records.iter().zip(self.store.rows()) {
            if r.true_class == class {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        sum.iter_mut().for_each(|s| *s /= n as f64);
        Some(sum)
    }
}

/// Appends `added` after `base`. The vocabulary keeps `base` order first.
pub fn merge(base: &DatasetBundle, added: &DatasetBundle) -> Result<DatasetBundle, DataError> {
    if added.is_empty() {
        return Ok(base.clone());
    }
    if base.is_empty() {
        return Ok(added.clone());
    }
    if base.dim() != added.dim() {
        return Err(DataError::DimMismatch {
            left: base.dim(),
            right: added.dim(),
        });
    }
    let base_ids: HashSet<&str> = base.records.iter().map(|r| r.id.as_str()).collect();
    if let Some(dup) = added.records.iter().find(|r| base_ids.contains(r.id.as_str())) {
        return Err(DataError::DuplicateId(dup.id.clone()));
    }
    let store = base.store.concat(&added.store)?;
    let mut records = base.records.clone();
    records.extend(added.records.iter().cloned());
    let mut bundle = bind(store, records)?;
    bundle.vocabulary = base.vocabulary.union(&added.vocabulary);
    Ok(bundle)
}

/// Percentage growth of a base set after adding `added` samples.
pub fn augmentation_fraction(added: usize, base: usize) -> Result<f64, DataError> {
    if base == 0 {
        return Err(DataError::ZeroBase);
    }
    Ok(100.0 * added as f64 / base as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(count: u32, dim: u32) -> Vec<u8> {
        let mut b = b"WSEM".to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&count.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        b
    }

    fn records(ids: &[(&str, &str)]) -> Vec<Record> {
        ids.iter().map(|(id, c)| Record::new(*id, Split::Train, *c)).collect()
    }

    #[test]
    fn empty_store_decodes() {
        let s = EmbeddingStore::from_bytes(&header(0, 4)).unwrap();
        assert_eq!(s.count(), 0);
        assert_eq!(s.dim(), 4);
    }

    #[test]
    fn identity_rows_decode() {
        let mut b = header(2, 2);
        for v in [1.0f32, 0.0, 0.0, 1.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let s = EmbeddingStore::from_bytes(&b).unwrap();
        assert_eq!(s.row(0), &[1.0, 0.0]);
        assert_eq!(s.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn short_payload_is_truncated() {
        let mut b = header(2, 2);
        b.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(
            EmbeddingStore::from_bytes(&b),
            Err(DataError::TruncatedPayload { expected: 16, found: 4 })
        ));
    }

    #[test]
    fn header_errors() {
        let mut b = header(0, 4);
        b[0] = b'X';
        assert!(matches!(EmbeddingStore::from_bytes(&b), Err(DataError::BadMagic(_))));
        let mut b = header(0, 4);
        b[4] = 2;
        assert!(matches!(EmbeddingStore::from_bytes(&b), Err(DataError::BadVersion(2))));
        let mut b = header(1, 1);
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingStore::from_bytes(&b),
            Err(DataError::NonFiniteValue { row: 0, col: 0 })
        ));
    }

    #[test]
    fn nan_rejected_at_construction() {
        assert!(matches!(
            EmbeddingStore::new(2, vec![0.0, f32::INFINITY]),
            Err(DataError::NonFiniteValue { row: 0, col: 1 })
        ));
    }

    #[test]
    fn bind_orders_vocabulary_by_first_appearance() {
        let store = EmbeddingStore::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        let b = bind(store, records(&[("a", "nurse"), ("b", "doctor"), ("c", "nurse")])).unwrap();
        assert_eq!(b.vocabulary().labels(), &["nurse", "doctor"]);
        assert_eq!(b.position("c"), Some(2));
    }

    #[test]
    fn bind_rejects_bad_input() {
        let store = EmbeddingStore::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            bind(store.clone(), records(&[("a", "x"), ("b", "y")])),
            Err(DataError::LengthMismatch { rows: 3, records: 2 })
        ));
        assert!(matches!(
            bind(store, records(&[("a", "x"), ("a", "y"), ("c", "y")])),
            Err(DataError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn bind_rejects_relevance_out_of_range() {
        let store = EmbeddingStore::new(1, vec![0.0]).unwrap();
        let mut r = Record::new("a", Split::Test, "x");
        r.objects = Some(vec![DetectedObject {
            label: "bench".into(),
            relevance: 1.5,
        }]);
        assert!(matches!(bind(store, vec![r]), Err(DataError::InvalidRelevance { .. })));
    }

    #[test]
    fn merge_appends_and_unions_vocabulary() {
        let a = bind(
            EmbeddingStore::new(2, vec![0.0; 4]).unwrap(),
            records(&[("a", "x"), ("b", "y")]),
        )
        .unwrap();
        let b = bind(
            EmbeddingStore::new(2, vec![1.0; 4]).unwrap(),
            records(&[("c", "z"), ("d", "x")]),
        )
        .unwrap();
        let m = merge(&a, &b).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.vocabulary().labels(), &["x", "y", "z"]);
        assert_eq!(m.store().row(2), &[1.0, 1.0]);

        let empty = bind(EmbeddingStore::empty(2).unwrap(), vec![]).unwrap();
        let same = merge(&a, &empty).unwrap();
        assert_eq!(same.records(), a.records());
        assert_eq!(same.store(), a.store());

        assert!(matches!(merge(&a, &a), Err(DataError::DuplicateId(_))));
        let narrow = bind(EmbeddingStore::new(1, vec![0.0]).unwrap(), records(&[("q", "x")])).unwrap();
        assert!(matches!(
            merge(&a, &narrow),
            Err(DataError::DimMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn merge_counts_add_for_large_sets() {
        let base = bind(
            EmbeddingStore::new(1, vec![0.0; 64_516]).unwrap(),
            (0..64_516)
                .map(|i| Record::new(format!("t{i}"), Split::Train, "c"))
                .collect(),
        )
        .unwrap();
        let added = bind(
            EmbeddingStore::new(1, vec![1.0; 2_144]).unwrap(),
            (0..2_144)
                .map(|i| Record::new(format!("p{i}"), Split::Procured, "c"))
                .collect(),
        )
        .unwrap();
        assert_eq!(merge(&base, &added).unwrap().len(), 66_660);
    }

    #[test]
    fn augmentation_fraction_values() {
        assert!((augmentation_fraction(2144, 64516).unwrap() - 3.32).abs() < 0.01);
        assert_eq!(augmentation_fraction(0, 7).unwrap(), 0.0);
        assert_eq!(augmentation_fraction(7, 7).unwrap(), 100.0);
        assert!(matches!(augmentation_fraction(1, 0), Err(DataError::ZeroBase)));
    }

    #[test]
    fn record_json_uses_snake_case_fields() {
        let mut r = Record::new("a", Split::Procured, "traffic_cop");
        r.provenance = Provenance::Txt2img;
        r.scene = Some(Scene {
            environment: Environment::Outdoor,
            venue: Some("street".into()),
        });
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains("\"split\":\"procured\""));
        assert!(line.contains("\"provenance\":\"txt2img\""));
        assert!(line.contains("\"environment\":\"outdoor\""));
        let back: Record = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }
}
