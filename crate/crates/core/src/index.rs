//! Exact L2 similarity search with a flat brute-force scan.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DatasetBundle, Record};

const BLOCK: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("query has dimension {query} but index has {index}")]
    DimMismatch { query: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    /// Euclidean distance to the query.
    pub distance: f64,
}

/// Immutable snapshot of the selected rows of a bundle.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    ids: Vec<String>,
    vectors: Vec<f32>,
    dim: usize,
}

impl NeighborIndex {
    pub fn build(bundle: &DatasetBundle, selector: impl Fn(&Record) -> bool) -> Self {
        let dim = bundle.dim();
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (r, row) in bundle.records().iter().zip(bundle.store().rows()) {
            if selector(r) {
                ids.push(r.id.clone());
                vectors.extend_from_slice(row);
            }
        }
        Self { ids, vectors, dim }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|i| i == id)
    }

    fn check(&self, query: &[f32]) -> Result<(), IndexError> {
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch {
                query: query.len(),
                index: self.dim,
            });
        }
        Ok(())
    }

    /// Squared distances from `query` to every indexed row, computed in blocks.
    fn squared_distances(&self, query: &[f32]) -> Vec<f64> {
        let q: Vec<f64> = query.iter().map(|&v| v as f64).collect();
        let mut out = Vec::with_capacity(self.ids.len());
        for block in self.vectors.chunks(BLOCK * self.dim) {
            out.extend(block.chunks_exact(self.dim).map(|row| {
                row.iter()
                    .zip(&q)
                    .map(|(&a, &b)| {
                        let d = a as f64 - b;
                        d * d
                    })
                    .sum::<f64>()
            }));
        }
        out
    }

    fn order(&self, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        a.1.total_cmp(&b.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
    }

    /// Up to `k` nearest rows by ascending distance, ties by ascending id.
    pub fn top_k(&self, query: &[f32], k: usize, exclude_id: Option<&str>) -> Result<Vec<Neighbor>, IndexError> {
        self.check(query)?;
        if k == 0 || self.ids.is_empty() {
            return Ok(Vec::new());
        }
        let mut cands: Vec<(usize, f64)> = self
            .squared_distances(query)
            .into_iter()
            .enumerate()
            .filter(|(i, _)| exclude_id != Some(self.ids[*i].as_str()))
            .collect();
        if cands.len() > k {
            cands.select_nth_unstable_by(k - 1, |a, b| self.order(a, b));
            cands.truncate(k);
        }
        cands.sort_unstable_by(|a, b| self.order(a, b));
        Ok(cands
            .into_iter()
            .map(|(i, d2)| Neighbor {
                id: self.ids[i].clone(),
                distance: d2.sqrt(),
            })
            .collect())
    }

    /// `top_k(query, k_cap, exclude_id)` restricted to distances `<= radius`.
    pub fn within_radius(
        &self,
        query: &[f32],
        radius: f64,
        k_cap: usize,
        exclude_id: Option<&str>,
    ) -> Result<Vec<Neighbor>, IndexError> {
        let mut hits = self.top_k(query, k_cap, exclude_id)?;
        hits.retain(|n| n.distance <= radius);
        Ok(hits)
    }

    /// Runs `top_k` for many queries in parallel; output order matches input.
    pub fn batch_top_k(&self, queries: &[&[f32]], k: usize) -> Result<Vec<Vec<Neighbor>>, IndexError> {
        queries.par_iter().map(|q| self.top_k(q, k, None)).collect()
    }
}
