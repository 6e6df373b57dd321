//! Exact top-k inner-product search over a pool view.
//!
//! Scores are accumulated in `f64` over the `f32` inputs, sequentially along
//! the row, so a given (query, row) pair always yields the same bits no matter
//! how queries are batched or how many threads run. Equal scores are broken by
//! ascending global row index.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::pool::PoolView;

/// Queries scanned together per pass over the pool.
pub const QUERY_BLOCK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    /// Cosine instead of raw inner product.
    pub normalize: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 5,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborHit {
    /// Global row index in the pool matrix.
    pub source_row: usize,
    /// Index of the owning entry in [`crate::pool::SourcePool::entries`].
    pub dataset: usize,
    pub score: f64,
}

impl NeighborHit {
    fn ranks_before(&self, other: &NeighborHit) -> bool {
        self.score > other.score
            || (self.score == other.score && self.source_row < other.source_row)
    }
}

/// Inner product with an `f64` accumulator, summed left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        acc += x as f64 * y as f64;
    }
    acc
}

fn inverse_norm(v: &[f32]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        1.0 / n
    } else {
        0.0
    }
}

struct TopK {
    k: usize,
    hits: Vec<NeighborHit>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            hits: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, hit: NeighborHit) {
        if self.hits.len() == self.k && !hit.ranks_before(&self.hits[self.k - 1]) {
            return;
        }
        let pos = self.hits.partition_point(|h| h.ranks_before(&hit));
        self.hits.insert(pos, hit);
        self.hits.truncate(self.k);
    }
}

/// A view prepared for repeated searches.
pub struct KnnIndex<'v, 'p> {
    view: &'v PoolView<'p>,
    cfg: SearchConfig,
    /// Per global row, only filled when normalizing.
    inv_norms: Option<Vec<f64>>,
}

impl<'v, 'p> KnnIndex<'v, 'p> {
    pub fn new(view: &'v PoolView<'p>, cfg: SearchConfig) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if view.is_empty() {
            return Err(Error::EmptyView);
        }
        let inv_norms = cfg.normalize.then(|| {
            view.pool()
                .matrix()
                .as_slice()
                .par_chunks_exact(view.dim())
                .map(inverse_norm)
                .collect()
        });
        Ok(Self {
            view,
            cfg,
            inv_norms,
        })
    }

    pub fn config(&self) -> SearchConfig {
        self.cfg
    }

    /// `min(k, visible rows)`.
    pub fn k_effective(&self) -> usize {
        self.cfg.k.min(self.view.rows())
    }

    pub fn search(&self, query: &[f32]) -> Result<Vec<NeighborHit>> {
        self.check_dim(query.len())?;
        Ok(self.search_block(&[query]).pop().unwrap())
    }

    /// Searches every `dim`-sized row of `data`. Result order follows row order.
    pub fn search_rows(&self, data: &[f32]) -> Result<Vec<Vec<NeighborHit>>> {
        let dim = self.view.dim();
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "query buffer of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        let per_block: Vec<Vec<Vec<NeighborHit>>> = data
            .par_chunks(dim * QUERY_BLOCK)
            .map(|block| {
                let queries: Vec<&[f32]> = block.chunks_exact(dim).collect();
                self.search_block(&queries)
            })
            .collect();
        Ok(per_block.into_iter().flatten().collect())
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.view.dim() {
            return Err(Error::Shape(format!(
                "query has dim {found}, pool has dim {}",
                self.view.dim()
            )));
        }
        Ok(())
    }

    fn search_block(&self, queries: &[&[f32]]) -> Vec<Vec<NeighborHit>> {
        let k = self.k_effective();
        let mut tops: Vec<TopK> = queries.iter().map(|_| TopK::new(k)).collect();
        let query_scale: Vec<f64> = match self.inv_norms {
            Some(_) => queries.iter().map(|q| inverse_norm(q)).collect(),
            None => vec![1.0; queries.len()],
        };
        let matrix = self.view.pool().matrix();
        for &entry_idx in self.view.entry_indices() {
            let entry = self.view.pool().entry(entry_idx);
            for row in entry.rows() {
                let source = matrix.row(row);
                let row_scale = self.inv_norms.as_ref().map_or(1.0, |n| n[row]);
                for ((q, top), qs) in queries.iter().zip(&mut tops).zip(&query_scale) {
                    let mut score = dot(q, source);
                    if self.inv_norms.is_some() {
                        score = score * row_scale * qs;
                    }
                    top.offer(NeighborHit {
                        source_row: row,
                        dataset: entry_idx,
                        score,
                    });
                }
            }
        }
        tops.into_iter().map(|t| t.hits).collect()
    }
}

pub fn top_k(query: &[f32], view: &PoolView<'_>, cfg: &SearchConfig) -> Result<Vec<NeighborHit>> {
    KnnIndex::new(view, *cfg)?.search(query)
}

/// One hit list per target row, in row order. Runs on the current rayon pool.
pub fn batch_top_k(
    targets: &EmbeddingMatrix,
    view: &PoolView<'_>,
    cfg: &SearchConfig,
) -> Result<Vec<Vec<NeighborHit>>> {
    batch_top_k_rows(targets.as_slice(), targets.dim(), view, cfg)
}

/// Like [`batch_top_k`] over a raw row-major buffer, which may hold zero rows.
pub fn batch_top_k_rows(
    data: &[f32],
    dim: usize,
    view: &PoolView<'_>,
    cfg: &SearchConfig,
) -> Result<Vec<Vec<NeighborHit>>> {
    let index = KnnIndex::new(view, *cfg)?;
    index.check_dim(dim)?;
    index.search_rows(data)
}

/// One line of the hit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub target_row: usize,
    pub hits: Vec<HitLogEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitLogEntry {
    pub dataset_id: String,
    pub source_row: usize,
    pub score: f64,
}

pub fn hit_records(hits: &[Vec<NeighborHit>], view: &PoolView<'_>) -> Vec<HitRecord> {
    let pool = view.pool();
    hits.iter()
        .enumerate()
        .map(|(target_row, row_hits)| HitRecord {
            target_row,
            hits: row_hits
                .iter()
                .map(|h| HitLogEntry {
                    dataset_id: pool.entry(h.dataset).dataset_id().to_string(),
                    source_row: h.source_row,
                    score: h.score,
                })
                .collect(),
        })
        .collect()
}

/// Writes hit records as JSON lines.
pub fn write_hit_log<W: Write>(mut out: W, records: &[HitRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<hit log>", e))?;
    }
    Ok(())
}

pub fn read_hit_log<R: BufRead>(input: R) -> Result<Vec<HitRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<hit log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
