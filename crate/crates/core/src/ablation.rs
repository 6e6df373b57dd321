//! Target-size ablation: rank from seeded subsamples of the target rows and
//! compare each ranking with the full-data ("main") ranking.

use serde::{Deserialize, Serialize};

use crate::embedding::{DatasetMeta, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{self, mean_std, EvalConfig, PerfTable};
use crate::pool::SourcePool;
use crate::ranker::{self, count_unranked, RankRunConfig, Ranking};

pub const DEFAULT_SAMPLE_SIZES: [usize; 10] = [10, 25, 50, 75, 100, 150, 250, 500, 1000, 2000];
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationPlan {
    /// Strictly increasing.
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self {
            sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

impl AblationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() {
            return Err(Error::Config("ablation plan has no sample sizes".into()));
        }
        if self.sample_sizes[0] == 0 {
            return Err(Error::Config("sample sizes must be at least 1".into()));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sample sizes must be strictly increasing".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config(
                "ablation plan needs at least one seed".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows_used: usize,
    pub ndcg: f64,
    pub avg_perf: f64,
    pub short_list: bool,
    pub unranked: usize,
    /// Top-p dataset ids, best first.
    pub top: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: RunMetrics,
    pub overlap_with_main: usize,
    /// Top-p overlap with the same seed at the previous sample size.
    pub persistent_with_previous: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub sample_size: usize,
    /// The size exceeded the target rows and every row was used.
    pub clamped: bool,
    pub runs: Vec<SeedRun>,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
    pub avg_perf_mean: f64,
    pub avg_perf_std: f64,
    pub overlap_mean: f64,
    pub persistent_mean: Option<f64>,
    pub unranked_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub target_id: String,
    pub rank_config: RankRunConfig,
    pub eval_config: EvalConfig,
    pub plan: AblationPlan,
    pub main: RunMetrics,
    pub sizes: Vec<SizeSummary>,
}

fn metrics(ranking: &Ranking, perf: &PerfTable, eval_cfg: &EvalConfig) -> Result<RunMetrics> {
    let scores = eval::score_target(ranking, perf, eval_cfg)?;
    Ok(RunMetrics {
        rows_used: ranking.rows_used,
        ndcg: scores.ndcg,
        avg_perf: scores.avg_perf,
        short_list: scores.short_list,
        unranked: count_unranked(ranking),
        top: ranking.top(eval_cfg.p).map(str::to_string).collect(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    mean_std(&v, Default::default()).0
}

/// Ranks every (size, seed) subsample and summarizes each size across seeds.
pub fn run_ablation(
    target: &EmbeddingMatrix,
    meta: &DatasetMeta,
    pool: &SourcePool,
    perf: &PerfTable,
    plan: &AblationPlan,
    cfg: &RankRunConfig,
    eval_cfg: &EvalConfig,
) -> Result<AblationReport> {
    plan.validate()?;
    let base = RankRunConfig {
        sample_size: None,
        seed: None,
        ..cfg.clone()
    };
    let main_ranking = ranker::rank(target, meta, pool, &base)?;
    let main = metrics(&main_ranking, perf, eval_cfg)?;
    let p = eval_cfg.p;

    let mut sizes = Vec::with_capacity(plan.sample_sizes.len());
    let mut previous: Option<Vec<Ranking>> = None;
    for &size in &plan.sample_sizes {
        let mut rankings = Vec::with_capacity(plan.seeds.len());
        let mut runs = Vec::with_capacity(plan.seeds.len());
        for (i, &seed) in plan.seeds.iter().enumerate() {
            let run_cfg = RankRunConfig {
                sample_size: Some(size),
                seed: Some(seed),
                ..base.clone()
            };
            let ranking = ranker::rank(target, meta, pool, &run_cfg)?;
            runs.push(SeedRun {
                seed,
                metrics: metrics(&ranking, perf, eval_cfg)?,
                overlap_with_main: eval::top_p_overlap(&main_ranking, &ranking, p),
                persistent_with_previous: previous
                    .as_ref()
                    .map(|prev| eval::persistent_candidates(&prev[i], &ranking, p)),
            });
            rankings.push(ranking);
        }
        let ndcgs: Vec<f64> = runs.iter().map(|r| r.metrics.ndcg).collect();
        let avgs: Vec<f64> = runs.iter().map(|r| r.metrics.avg_perf).collect();
        let (ndcg_mean, ndcg_std) = mean_std(&ndcgs, eval_cfg.std);
        let (avg_perf_mean, avg_perf_std) = mean_std(&avgs, eval_cfg.std);
        let persistent_mean = previous.as_ref().map(|_| {
            mean(
                runs.iter()
                    .filter_map(|r| r.persistent_with_previous.map(|c| c as f64)),
            )
        });
        sizes.push(SizeSummary {
            sample_size: size,
            clamped: size > target.rows(),
            overlap_mean: mean(runs.iter().map(|r| r.overlap_with_main as f64)),
            unranked_mean: mean(runs.iter().map(|r| r.metrics.unranked as f64)),
            persistent_mean,
            runs,
            ndcg_mean,
            ndcg_std,
            avg_perf_mean,
            avg_perf_std,
        });
        previous = Some(rankings);
    }

    Ok(AblationReport {
        target_id: meta.dataset_id.clone(),
        rank_config: base,
        eval_config: *eval_cfg,
        plan: plan.clone(),
        main,
        sizes,
    })
}
