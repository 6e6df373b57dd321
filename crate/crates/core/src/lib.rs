//! Rank candidate source datasets for cross-lingual transfer by nearest-neighbor
//! voting, and score rankings against measured transfer performance.
//!
//! The pipeline:
//!
//! 1. [`embedding`]: load per-dataset subword hidden states.
//! 2. [`pool`]: concatenate the source datasets and keep a row → dataset map.
//! 3. [`knn`]: exact top-k inner-product search for every target row.
//! 4. [`ranker`]: tally which datasets the neighbors came from and sort.
//! 5. [`eval`], [`diversity`], [`ablation`]: NDCG@p, average performance@p,
//!    overlap and diversity statistics, subsampling sweeps.
//!
//! ```
//! use nnrank::{EmbeddingMatrix, DatasetMeta, SourcePool, RankRunConfig, rank};
//!
//! let meta = |id: &str, iso: &str| DatasetMeta {
//!     dataset_id: id.into(),
//!     iso639_3: iso.into(),
//!     model_id: "mbert".into(),
//!     layer: 8,
//!     corpus_tag: "task".into(),
//!     line_count: 1,
//! };
//! let pool = SourcePool::from_datasets(vec![
//!     (EmbeddingMatrix::from_rows(&[[1.0, 0.0], [0.9, 0.1]])?, meta("en_ewt", "eng")),
//!     (EmbeddingMatrix::from_rows(&[[0.0, 1.0]])?, meta("de_gsd", "deu")),
//! ])?;
//! let target = EmbeddingMatrix::from_rows(&[[1.0, 0.2]])?;
//! let cfg = RankRunConfig { k: 2, ..Default::default() };
//! let ranking = rank(&target, &meta("fr_gsd", "fra"), &pool, &cfg)?;
//! assert_eq!(ranking.ordered[0].dataset_id, "en_ewt");
//! assert_eq!(ranking.unranked, vec!["de_gsd".to_string()]);
//! # Ok::<(), nnrank::Error>(())
//! ```

pub mod ablation;
pub mod diversity;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod knn;
pub mod pool;
pub mod ranker;

pub use ablation::{run_ablation, AblationPlan, AblationReport};
pub use embedding::{read_embedding_file, write_embedding_file, DatasetMeta, EmbeddingMatrix};
pub use error::{Error, Result};
pub use eval::{
    avg_perf_at_p, compare_runs, gold_relevance, ndcg_at_p, persistent_candidates, split_report,
    top_p_overlap, EvalConfig, EvalReport, Gain, GoldRelevance, PerfTable, StdKind,
};
pub use knn::{batch_top_k, top_k, NeighborHit, SearchConfig};
pub use pool::{build_pool, PoolView, SourcePool};
pub use ranker::{count_unranked, rank, subsample_rows, RankRunConfig, Ranking, Tally};
