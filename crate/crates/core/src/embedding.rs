//! Embedding matrices and the on-disk embedding file format (v1).
//!
//! Layout, all integers little-endian:
//!
//! | offset | size       | field                                   |
//! |--------|------------|-----------------------------------------|
//! | 0      | 4          | magic `NNRK`                            |
//! | 4      | 2          | version `u16` = 1                       |
//! | 6      | 2          | reserved `u16` = 0 (float32 payload)    |
//! | 8      | 4          | `dim` as `u32`                          |
//! | 12     | 8          | `rows` as `u64`                         |
//! | 20     | 4          | `meta_len` as `u32`                     |
//! | 24     | `meta_len` | UTF-8 JSON [`DatasetMeta`]              |
//! | ...    | rows×dim×4 | `f32` payload, row-major                |
//!
//! There is no padding and no checksum.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NNRK";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

/// Row-major `rows × dim` matrix of `f32` hidden states.
///
/// Always has at least one row and one column and contains only finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "rows and dim must be positive, got {rows}x{dim}"
            )));
        }
        let expected = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::Shape(format!("{rows}x{dim} overflows")))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{rows}x{dim} needs {expected} values, got {}",
                data.len()
            )));
        }
        check_finite(&data, dim)?;
        Ok(Self { rows, dim, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Shape(format!(
                    "row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Panics if `i >= rows`.
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::RowOutOfRange {
                    row: i,
                    rows: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, data)
    }
}

fn check_finite(data: &[f32], dim: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(pos) => Err(Error::NonFinite {
            row: pos / dim,
            col: pos % dim,
            value: data[pos],
        }),
    }
}

/// Identity of one encoded dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dataset_id: String,
    pub iso639_3: String,
    pub model_id: String,
    pub layer: u32,
    pub corpus_tag: String,
    pub line_count: u64,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_id.is_empty() {
            return Err(Error::Metadata("dataset_id is empty".into()));
        }
        if self.iso639_3.len() != 3 || !self.iso639_3.bytes().all(|b| b.is_ascii_alphabetic()) {
            return Err(Error::Metadata(format!(
                "iso639_3 must be three ASCII letters, got {:?}",
                self.iso639_3
            )));
        }
        Ok(())
    }
}

/// Serializes a matrix and its metadata into the v1 byte layout.
pub fn encode(matrix: &EmbeddingMatrix, meta: &DatasetMeta) -> Result<Vec<u8>> {
    meta.validate()?;
    let dim = u32::try_from(matrix.dim)
        .map_err(|_| Error::Shape(format!("dim {} does not fit in u32", matrix.dim)))?;
    let meta_json = serde_json::to_vec(meta)?;
    let meta_len = u32::try_from(meta_json.len())
        .map_err(|_| Error::Metadata("metadata block exceeds u32 length".into()))?;

    let mut out = Vec::with_capacity(HEADER_LEN + meta_json.len() + matrix.data.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(matrix.rows as u64).to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta_json);
    for v in &matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses and validates a complete v1 buffer. Trailing bytes are a size mismatch.
pub fn decode(bytes: &[u8]) -> Result<(EmbeddingMatrix, DatasetMeta)> {
    let (matrix, meta, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        let payload = (matrix.rows * matrix.dim * 4) as u64;
        return Err(Error::SizeMismatch {
            expected: payload,
            actual: payload + (bytes.len() - used) as u64,
        });
    }
    Ok((matrix, meta))
}

/// Parses a v1 record at the start of `bytes` and returns the number of bytes it spans.
///
/// The payload must be complete, extra bytes after it are left to the caller.
pub(crate) fn decode_prefix(bytes: &[u8]) -> Result<(EmbeddingMatrix, DatasetMeta, usize)> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let reserved = u16::from_le_bytes(bytes[6..8].try_into().unwrap());
    if reserved != 0 {
        return Err(Error::UnsupportedDtype(reserved));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let meta_len = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;

    let meta_end = HEADER_LEN + meta_len;
    if bytes.len() < meta_end {
        return Err(Error::Truncated {
            needed: meta_end,
            available: bytes.len(),
        });
    }
    let meta: DatasetMeta = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| Error::Metadata(e.to_string()))?;
    meta.validate()?;

    let available = (bytes.len() - meta_end) as u64;
    let expected = rows
        .checked_mul(dim as u64)
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::SizeMismatch {
            expected: u64::MAX,
            actual: available,
        })?;
    if available < expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: available,
        });
    }
    let payload = &bytes[meta_end..meta_end + expected as usize];
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let matrix = EmbeddingMatrix::new(rows as usize, dim, data)?;
    Ok((matrix, meta, meta_end + expected as usize))
}

pub fn write_embedding_file(
    matrix: &EmbeddingMatrix,
    meta: &DatasetMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(matrix, meta)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<(EmbeddingMatrix, DatasetMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
