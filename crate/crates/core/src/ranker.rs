//! Tallying neighbor hits per source dataset and turning the tally into a ranking.
//!
//! Every one of a target row's `k` neighbors adds 1 to its dataset's count, so a
//! dataset can gain several points from a single row. Datasets are ordered by
//! descending count, ties by ascending id; datasets never hit stay unranked.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{DatasetMeta, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::knn::{self, HitRecord, KnnIndex, NeighborHit, SearchConfig};
use crate::pool::{PoolView, SourcePool};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_LAYER: u32 = 8;
pub const DEFAULT_MAX_LINES: u64 = 1000;

/// Every knob of a ranking run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankRunConfig {
    pub k: usize,
    pub layer: u32,
    pub max_lines: u64,
    pub sample_size: Option<usize>,
    pub seed: Option<u64>,
    pub exclude_same_iso: bool,
    pub exclude_ids: Vec<String>,
    pub normalize: bool,
}

impl Default for RankRunConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            layer: DEFAULT_LAYER,
            max_lines: DEFAULT_MAX_LINES,
            sample_size: None,
            seed: None,
            exclude_same_iso: true,
            exclude_ids: Vec::new(),
            normalize: false,
        }
    }
}

impl RankRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.sample_size == Some(0) {
            return Err(Error::Config("sample_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            k: self.k,
            normalize: self.normalize,
        }
    }
}

/// Per-dataset hit counts over the datasets of one view.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub counts: BTreeMap<String, u64>,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn get(&self, dataset_id: &str) -> Option<u64> {
        self.counts.get(dataset_id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedDataset {
    pub rank: usize,
    pub dataset_id: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub config: RankRunConfig,
    pub target_id: String,
    /// Target rows that were searched (after subsampling).
    pub rows_used: usize,
    pub k_effective: usize,
    pub ordered: Vec<RankedDataset>,
    /// Zero-count datasets, ascending id.
    pub unranked: Vec<String>,
}

impl Ranking {
    /// Orders a tally: count descending, ties by ascending id, zeros left unranked.
    pub fn from_tally(
        tally: &Tally,
        target_id: impl Into<String>,
        config: RankRunConfig,
        rows_used: usize,
        k_effective: usize,
    ) -> Self {
        let mut positive: Vec<(&String, u64)> = tally
            .counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(id, &c)| (id, c))
            .collect();
        // BTreeMap iteration is already id-ascending; a stable sort keeps that within equal counts
        positive.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
        let ordered = positive
            .into_iter()
            .enumerate()
            .map(|(i, (id, count))| RankedDataset {
                rank: i + 1,
                dataset_id: id.clone(),
                count,
            })
            .collect();
        let unranked = tally
            .counts
            .iter()
            .filter(|(_, &c)| c == 0)
            .map(|(id, _)| id.clone())
            .collect();
        Self {
            config,
            target_id: target_id.into(),
            rows_used,
            k_effective,
            ordered,
            unranked,
        }
    }

    pub fn tally(&self) -> Tally {
        let counts = self
            .ordered
            .iter()
            .map(|r| (r.dataset_id.clone(), r.count))
            .chain(self.unranked.iter().map(|id| (id.clone(), 0)))
            .collect();
        Tally { counts }
    }

    /// Ranked dataset ids, best first.
    pub fn ordered_ids(&self) -> impl Iterator<Item = &str> {
        self.ordered.iter().map(|r| r.dataset_id.as_str())
    }

    /// Every dataset the ranking covers, ranked or not.
    pub fn universe(&self) -> impl Iterator<Item = &str> {
        self.ordered_ids()
            .chain(self.unranked.iter().map(String::as_str))
    }

    /// The first `min(p, |ordered|)` ids.
    pub fn top(&self, p: usize) -> impl Iterator<Item = &str> {
        self.ordered_ids().take(p)
    }

    /// CSV with header `rank,dataset_id,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,dataset_id,count\n");
        for r in &self.ordered {
            out.push_str(&format!(
                "{},{},{}\n",
                r.rank,
                csv_field(&r.dataset_id),
                r.count
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn count_unranked(ranking: &Ranking) -> usize {
    ranking.unranked.len()
}

/// Adds one count per hit. Every dataset in `view` gets an entry.
pub fn tally_hits(hits: &[Vec<NeighborHit>], view: &PoolView<'_>, prior: Option<&Tally>) -> Tally {
    let pool = view.pool();
    let mut by_entry = vec![0u64; pool.len()];
    for hit in hits.iter().flatten() {
        by_entry[hit.dataset] += 1;
    }
    collect_tally(&by_entry, view, prior)
}

fn collect_tally(by_entry: &[u64], view: &PoolView<'_>, prior: Option<&Tally>) -> Tally {
    let pool = view.pool();
    let counts = view
        .entry_indices()
        .iter()
        .map(|&i| {
            let id = pool.entry(i).dataset_id();
            let base = prior.and_then(|p| p.get(id)).unwrap_or(0);
            (id.to_string(), base + by_entry[i])
        })
        .collect();
    Tally { counts }
}

/// Rows drawn for a subsampled run.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub matrix: EmbeddingMatrix,
    /// Original row indices, ascending.
    pub indices: Vec<usize>,
    /// True when `sample_size` exceeded the available rows.
    pub clamped: bool,
}

/// Uniform sample without replacement of `min(sample_size, rows)` rows, kept in original order.
pub fn subsample_rows(
    target: &EmbeddingMatrix,
    sample_size: usize,
    seed: u64,
) -> Result<Subsample> {
    if sample_size == 0 {
        return Err(Error::Config("sample_size must be at least 1".into()));
    }
    let rows = target.rows();
    let clamped = sample_size > rows;
    if clamped {
        log::warn!("sample size {sample_size} exceeds {rows} target rows, using all rows");
    }
    let indices: Vec<usize> = if sample_size >= rows {
        (0..rows).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, rows, sample_size).into_vec();
        picked.sort_unstable();
        picked
    };
    let matrix = if indices.len() == rows {
        target.clone()
    } else {
        target.select_rows(&indices)?
    };
    Ok(Subsample {
        matrix,
        indices,
        clamped,
    })
}

struct Prepared<'p> {
    view: PoolView<'p>,
    config: RankRunConfig,
    sample: Option<Subsample>,
}

fn prepare<'p>(
    target: &EmbeddingMatrix,
    meta: &DatasetMeta,
    pool: &'p SourcePool,
    cfg: &RankRunConfig,
) -> Result<Prepared<'p>> {
    cfg.validate()?;
    if target.dim() != pool.dim() {
        return Err(Error::DimMismatch {
            dataset_id: meta.dataset_id.clone(),
            expected: pool.dim(),
            found: target.dim(),
        });
    }
    if meta.layer != pool.layer() {
        return Err(Error::LayerMismatch {
            dataset_id: meta.dataset_id.clone(),
            expected: pool.layer(),
            found: meta.layer,
        });
    }
    if cfg.layer != pool.layer() {
        return Err(Error::Config(format!(
            "run configured for layer {} but pool holds layer {}",
            cfg.layer,
            pool.layer()
        )));
    }
    let isos: Vec<&str> = if cfg.exclude_same_iso {
        vec![meta.iso639_3.as_str()]
    } else {
        Vec::new()
    };
    let ids: Vec<&str> = cfg.exclude_ids.iter().map(String::as_str).collect();
    let view = pool.filter_view(&isos, &ids)?;

    let mut config = cfg.clone();
    let sample = match cfg.sample_size {
        Some(n) => {
            let seed = *config.seed.get_or_insert(0);
            Some(subsample_rows(target, n, seed)?)
        }
        None => None,
    };
    if cfg.k > view.rows() {
        log::warn!(
            "k = {} exceeds the {} visible source rows, using k = {}",
            cfg.k,
            view.rows(),
            view.rows()
        );
    }
    Ok(Prepared {
        view,
        config,
        sample,
    })
}

/// Ranks the view's source datasets for one target.
pub fn rank(
    target: &EmbeddingMatrix,
    meta: &DatasetMeta,
    pool: &SourcePool,
    cfg: &RankRunConfig,
) -> Result<Ranking> {
    rank_with_prior(target, meta, pool, cfg, None)
}

/// [`rank`] with the tally initialized from `prior` instead of zeros.
pub fn rank_with_prior(
    target: &EmbeddingMatrix,
    meta: &DatasetMeta,
    pool: &SourcePool,
    cfg: &RankRunConfig,
    prior: Option<&Tally>,
) -> Result<Ranking> {
    let prep = prepare(target, meta, pool, cfg)?;
    let rows = prep.sample.as_ref().map_or(target, |s| &s.matrix);
    let index = KnnIndex::new(&prep.view, prep.config.search_config())?;
    let dim = rows.dim();
    let n_entries = pool.len();

    // private per-block counts, summed afterwards
    let by_entry = rows
        .as_slice()
        .par_chunks(dim * knn::QUERY_BLOCK)
        .map(|block| -> Result<Vec<u64>> {
            let mut local = vec![0u64; n_entries];
            for hits in index.search_rows(block)? {
                for h in hits {
                    local[h.dataset] += 1;
                }
            }
            Ok(local)
        })
        .try_reduce(
            || vec![0u64; n_entries],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;

    let tally = collect_tally(&by_entry, &prep.view, prior);
    Ok(Ranking::from_tally(
        &tally,
        meta.dataset_id.clone(),
        prep.config,
        rows.rows(),
        index.k_effective(),
    ))
}

/// [`rank`] that also returns the per-row neighbor lists, indexed by original target row.
pub fn rank_with_hits(
    target: &EmbeddingMatrix,
    meta: &DatasetMeta,
    pool: &SourcePool,
    cfg: &RankRunConfig,
) -> Result<(Ranking, Vec<HitRecord>)> {
    let prep = prepare(target, meta, pool, cfg)?;
    let rows = prep.sample.as_ref().map_or(target, |s| &s.matrix);
    let search = prep.config.search_config();
    let hits = knn::batch_top_k(rows, &prep.view, &search)?;
    let tally = tally_hits(&hits, &prep.view, None);
    let k_effective = search.k.min(prep.view.rows());
    let mut records = knn::hit_records(&hits, &prep.view);
    if let Some(sample) = &prep.sample {
        for (r, &orig) in records.iter_mut().zip(&sample.indices) {
            r.target_row = orig;
        }
    }
    let ranking = Ranking::from_tally(
        &tally,
        meta.dataset_id.clone(),
        prep.config,
        rows.rows(),
        k_effective,
    );
    Ok((ranking, records))
}
