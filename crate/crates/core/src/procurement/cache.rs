use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Channel, ProcuredBatch, ProcurementError};
use crate::data::{self, Record};

/// Batches keyed by request id, held in memory and optionally mirrored to
/// `{dir}/{request_id}.json` plus `{dir}/{request_id}.wsem`.
#[derive(Debug, Default)]
pub struct ProcurementCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, (String, ProcuredBatch)>>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request_id: String,
    channel: Channel,
    fingerprint: String,
    image_refs: Vec<String>,
    records: Vec<Record>,
}

impl ProcurementCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, ProcurementError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            memory: Mutex::default(),
        })
    }

    pub fn get(&self, request_id: &str, fingerprint: &str) -> Result<Option<ProcuredBatch>, ProcurementError> {
        if let Some((fp, b)) = self.memory.lock().unwrap().get(request_id) {
            if fp == fingerprint {
                return Ok(Some(b.clone()));
            }
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let meta = dir.join(format!("{request_id}.json"));
        if !meta.exists() {
            return Ok(None);
        }
        let entry: CacheEntry = serde_json::from_str(&std::fs::read_to_string(meta)?)?;
        if entry.fingerprint != fingerprint {
            return Ok(None);
        }
        let embeddings = data::load_embedding_store(dir.join(format!("{request_id}.wsem")))?;
        let batch = ProcuredBatch {
            request_id: entry.request_id,
            channel: entry.channel,
            records: entry.records,
            embeddings,
            image_refs: entry.image_refs,
        };
        self.memory
            .lock()
            .unwrap()
            .entry(request_id.to_string())
            .or_insert_with(|| (fingerprint.to_string(), batch.clone()));
        Ok(Some(batch))
    }

    pub fn put(&self, batch: &ProcuredBatch, fingerprint: &str) -> Result<(), ProcurementError> {
        if let Some(dir) = &self.dir {
            data::save_embedding_store(&batch.embeddings, dir.join(format!("{}.wsem", batch.request_id)))?;
            let entry = CacheEntry {
                request_id: batch.request_id.clone(),
                channel: batch.channel,
                fingerprint: fingerprint.to_string(),
                image_refs: batch.image_refs.clone(),
                records: batch.records.clone(),
            };
            std::fs::write(
                dir.join(format!("{}.json", batch.request_id)),
                serde_json::to_vec_pretty(&entry)?,
            )?;
        }
        self.memory
            .lock()
            .unwrap()
            .insert(batch.request_id.clone(), (fingerprint.to_string(), batch.clone()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
