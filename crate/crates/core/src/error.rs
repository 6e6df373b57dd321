use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // --- embedding file format ---
    #[error("bad magic {found:?}, expected \"NNRK\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("reserved header field is {0}, only float32 payloads (0) are supported")]
    UnsupportedDtype(u16),
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload size mismatch: header implies {expected} bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f32 },
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("invalid matrix shape: {0}")]
    Shape(String),

    // --- pool construction ---
    #[error("dimension mismatch: dataset {dataset_id} has dim {found}, pool has {expected}")]
    DimMismatch {
        dataset_id: String,
        expected: usize,
        found: usize,
    },
    #[error("layer mismatch: {dataset_id} is layer {found}, expected {expected}")]
    LayerMismatch {
        dataset_id: String,
        expected: u32,
        found: u32,
    },
    #[error("duplicate dataset id {0}")]
    DuplicateId(String),
    #[error("empty pool: {0}")]
    EmptyPool(String),
    #[error("row {row} out of range for pool of {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("every dataset was excluded from the pool view")]
    EmptyView,

    // --- configuration ---
    #[error("invalid configuration: {0}")]
    Config(String),

    // --- evaluation ---
    #[error("missing score for source {source_id} on target {target_id}")]
    MissingScore {
        source_id: String,
        target_id: String,
    },
    #[error("duplicate score for source {source_id} on target {target_id}")]
    DuplicateScore {
        source_id: String,
        target_id: String,
    },
    #[error("invalid score table: {0}")]
    PerfTable(String),
    #[error("dataset universe mismatch: {0}")]
    UniverseMismatch(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("report mismatch: {0}")]
    ReportMismatch(String),
    #[error("empty ranking: {0}")]
    EmptyRanking(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::UnsupportedDtype(_) => "unsupported_dtype",
            Error::Truncated { .. } => "truncated",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::Metadata(_) => "metadata",
            Error::Shape(_) => "shape",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::LayerMismatch { .. } => "layer_mismatch",
            Error::DuplicateId(_) => "duplicate_id",
            Error::EmptyPool(_) => "empty_pool",
            Error::RowOutOfRange { .. } => "row_out_of_range",
            Error::EmptyView => "empty_view",
            Error::Config(_) => "config",
            Error::MissingScore { .. } => "missing_score",
            Error::DuplicateScore { .. } => "duplicate_score",
            Error::PerfTable(_) => "perf_table",
            Error::UniverseMismatch(_) => "universe_mismatch",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::ReportMismatch(_) => "report_mismatch",
            Error::EmptyRanking(_) => "empty_ranking",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
