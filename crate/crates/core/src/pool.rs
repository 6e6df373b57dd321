//! Concatenated source pool and the row → dataset map.
//!
//! Every source dataset's matrix is appended, in manifest order, to one
//! contiguous matrix. An offset table records where each dataset starts so any
//! pool row can be traced back to its dataset with a binary search.
//!
//! # Pool cache layout
//!
//! A built pool is cached as a regular v1 embedding record (see
//! [`crate::embedding`]) describing the concatenated matrix, followed by a
//! trailer:
//!
//! ```text
//! [v1 embedding record][entries JSON][trailer_len: u64 LE][b"NNRP"]
//! ```
//!
//! The entries JSON is `{"entries":[{"meta":{...},"offset":0,"count":N}, ...]}`
//! and `trailer_len` is its length in bytes.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{self, DatasetMeta, EmbeddingMatrix};
use crate::error::{Error, Result};

pub const CACHE_TRAILER_MAGIC: [u8; 4] = *b"NNRP";
const POOL_DATASET_ID: &str = "pool";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub meta: DatasetMeta,
    pub offset: usize,
    pub count: usize,
}

impl PoolEntry {
    pub fn dataset_id(&self) -> &str {
        &self.meta.dataset_id
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePool {
    matrix: EmbeddingMatrix,
    entries: Vec<PoolEntry>,
    layer: u32,
}

#[derive(Serialize, Deserialize)]
struct CacheTrailer {
    entries: Vec<PoolEntry>,
}

impl SourcePool {
    /// Concatenates datasets in the given order.
    pub fn from_datasets(datasets: Vec<(EmbeddingMatrix, DatasetMeta)>) -> Result<Self> {
        let Some((first, first_meta)) = datasets.first() else {
            return Err(Error::EmptyPool("no source datasets given".into()));
        };
        let dim = first.dim();
        let layer = first_meta.layer;
        let model = first_meta.model_id.clone();

        let total: usize = datasets.iter().map(|(m, _)| m.rows()).sum();
        let mut data = Vec::with_capacity(total * dim);
        let mut entries = Vec::with_capacity(datasets.len());
        let mut seen = HashSet::new();
        let mut offset = 0;
        for (matrix, meta) in datasets {
            if matrix.dim() != dim {
                return Err(Error::DimMismatch {
                    dataset_id: meta.dataset_id,
                    expected: dim,
                    found: matrix.dim(),
                });
            }
            if meta.layer != layer {
                return Err(Error::LayerMismatch {
                    dataset_id: meta.dataset_id,
                    expected: layer,
                    found: meta.layer,
                });
            }
            if !seen.insert(meta.dataset_id.clone()) {
                return Err(Error::DuplicateId(meta.dataset_id));
            }
            if meta.model_id != model {
                log::warn!(
                    "dataset {} was encoded with {}, pool started with {}",
                    meta.dataset_id,
                    meta.model_id,
                    model
                );
            }
            let count = matrix.rows();
            data.extend_from_slice(matrix.as_slice());
            entries.push(PoolEntry {
                meta,
                offset,
                count,
            });
            offset += count;
        }
        let matrix = EmbeddingMatrix::new(total, dim, data)?;
        Ok(Self {
            matrix,
            entries,
            layer,
        })
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &PoolEntry {
        &self.entries[index]
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    /// Total number of source rows.
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index into [`Self::entries`] of the dataset owning `row`.
    pub fn entry_index_of_row(&self, row: usize) -> Result<usize> {
        if row >= self.rows() {
            return Err(Error::RowOutOfRange {
                row,
                rows: self.rows(),
            });
        }
        // first entry whose offset is > row, minus one
        let idx = self.entries.partition_point(|e| e.offset <= row) - 1;
        Ok(idx)
    }

    pub fn map_row(&self, row: usize) -> Result<&str> {
        self.entry_index_of_row(row)
            .map(|i| self.entries[i].dataset_id())
    }

    pub fn full_view(&self) -> PoolView<'_> {
        PoolView {
            pool: self,
            kept: (0..self.entries.len()).collect(),
        }
    }

    /// View without the datasets whose language or id is excluded.
    pub fn filter_view<S: AsRef<str>>(
        &self,
        exclude_isos: &[S],
        exclude_ids: &[S],
    ) -> Result<PoolView<'_>> {
        let kept: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                !exclude_isos.iter().any(|s| s.as_ref() == e.meta.iso639_3)
                    && !exclude_ids.iter().any(|s| s.as_ref() == e.meta.dataset_id)
            })
            .map(|(i, _)| i)
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyView);
        }
        Ok(PoolView { pool: self, kept })
    }

    fn cache_meta(&self) -> DatasetMeta {
        let first = &self.entries[0].meta;
        DatasetMeta {
            dataset_id: POOL_DATASET_ID.to_string(),
            iso639_3: "mul".to_string(),
            model_id: first.model_id.clone(),
            layer: self.layer,
            corpus_tag: POOL_DATASET_ID.to_string(),
            line_count: self.entries.iter().map(|e| e.meta.line_count).sum(),
        }
    }

    pub fn to_cache_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = embedding::encode(&self.matrix, &self.cache_meta())?;
        let trailer = serde_json::to_vec(&CacheTrailer {
            entries: self.entries.clone(),
        })?;
        bytes.extend_from_slice(&trailer);
        bytes.extend_from_slice(&(trailer.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&CACHE_TRAILER_MAGIC);
        Ok(bytes)
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<Self> {
        let (matrix, meta, used) = embedding::decode_prefix(bytes)?;
        let rest = &bytes[used..];
        if rest.len() < 12 || rest[rest.len() - 4..] != CACHE_TRAILER_MAGIC {
            return Err(Error::Metadata("pool cache trailer missing".into()));
        }
        let len_at = rest.len() - 12;
        let trailer_len = u64::from_le_bytes(rest[len_at..len_at + 8].try_into().unwrap());
        if trailer_len != len_at as u64 {
            return Err(Error::SizeMismatch {
                expected: trailer_len,
                actual: len_at as u64,
            });
        }
        let trailer: CacheTrailer = serde_json::from_slice(&rest[..len_at])
            .map_err(|e| Error::Metadata(format!("pool cache entries: {e}")))?;
        let pool = Self {
            matrix,
            entries: trailer.entries,
            layer: meta.layer,
        };
        pool.check_entries()?;
        Ok(pool)
    }

    fn check_entries(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyPool("pool cache lists no datasets".into()));
        }
        let mut seen = HashSet::new();
        let mut offset = 0;
        for e in &self.entries {
            e.meta.validate()?;
            if e.offset != offset || e.count == 0 {
                return Err(Error::Metadata(format!(
                    "entry {} has offset {} count {}, expected offset {offset}",
                    e.meta.dataset_id, e.offset, e.count
                )));
            }
            if e.meta.layer != self.layer {
                return Err(Error::LayerMismatch {
                    dataset_id: e.meta.dataset_id.clone(),
                    expected: self.layer,
                    found: e.meta.layer,
                });
            }
            if !seen.insert(e.meta.dataset_id.as_str()) {
                return Err(Error::DuplicateId(e.meta.dataset_id.clone()));
            }
            offset += e.count;
        }
        if offset != self.rows() {
            return Err(Error::SizeMismatch {
                expected: self.rows() as u64,
                actual: offset as u64,
            });
        }
        Ok(())
    }

    pub fn write_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_cache_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        f.sync_all().map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_cache_bytes(&bytes)
    }
}

/// Reads every embedding file and concatenates them in order.
pub fn build_pool<P: AsRef<Path>>(files: &[P]) -> Result<SourcePool> {
    if files.is_empty() {
        return Err(Error::EmptyPool("manifest lists no files".into()));
    }
    let datasets = files
        .iter()
        .map(embedding::read_embedding_file)
        .collect::<Result<Vec<_>>>()?;
    SourcePool::from_datasets(datasets)
}

/// Reads a JSON array of file paths. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let listed: Vec<PathBuf> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    Ok(listed
        .into_iter()
        .map(|p| if p.is_relative() { base.join(p) } else { p })
        .collect())
}

/// The subset of a pool visible to one ranking run. Rows keep their global pool indices.
#[derive(Debug, Clone)]
pub struct PoolView<'a> {
    pool: &'a SourcePool,
    kept: Vec<usize>,
}

impl<'a> PoolView<'a> {
    pub fn pool(&self) -> &'a SourcePool {
        self.pool
    }

    /// Kept entry indices, ascending.
    pub fn entry_indices(&self) -> &[usize] {
        &self.kept
    }

    pub fn entries(&self) -> impl Iterator<Item = &'a PoolEntry> + '_ {
        self.kept.iter().map(|&i| &self.pool.entries[i])
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.entries().map(PoolEntry::dataset_id)
    }

    pub fn rows(&self) -> usize {
        self.entries().map(|e| e.count).sum()
    }

    pub fn dim(&self) -> usize {
        self.pool.dim()
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Global row indices visible through the view, ascending.
    pub fn row_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries().flat_map(PoolEntry::rows)
    }
}
