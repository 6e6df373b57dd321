//! Ranking quality against measured transfer performance.
//!
//! Gold relevance is graded from the performance table: for each target, the
//! best-performing source gets `gamma_max`, the next `gamma_max - 1`, and so on
//! down to 1; everything below is 0. NDCG@p then discounts the relevance of
//! each predicted position `i` (1-based) by `log2(i + 1)`. Datasets a ranking
//! left unranked sit at rank infinity and add nothing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::Ranking;

pub const DEFAULT_P: usize = 5;
pub const DEFAULT_GAMMA_MAX: u32 = 10;

/// Downstream scores keyed by (source, target).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerfTable {
    scores: HashMap<(String, String), f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PerfRecord {
    source_id: String,
    target_id: String,
    score: f64,
}

impl PerfTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: &str, target: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::PerfTable(format!(
                "score for ({source}, {target}) is not finite"
            )));
        }
        let key = (source.to_string(), target.to_string());
        if self.scores.contains_key(&key) {
            return Err(Error::DuplicateScore {
                source_id: key.0,
                target_id: key.1,
            });
        }
        self.scores.insert(key, score);
        Ok(())
    }

    pub fn get(&self, source: &str, target: &str) -> Result<f64> {
        // HashMap<(String, String)> can't be probed with borrowed pairs
        self.scores
            .get(&(source.to_string(), target.to_string()))
            .copied()
            .ok_or_else(|| Error::MissingScore {
                source_id: source.to_string(),
                target_id: target.to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Reads CSV with header `source_id,target_id,score`.
    pub fn from_csv_reader<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["source_id", "target_id", "score"] {
            return Err(Error::PerfTable(format!(
                "expected header source_id,target_id,score, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut table = Self::new();
        for record in reader.deserialize() {
            let r: PerfRecord = record?;
            table.insert(&r.source_id, &r.target_id, r.score)?;
        }
        Ok(table)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }
}

/// Gain applied to a relevance grade before discounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Gain {
    /// `2^r - 1`
    #[default]
    #[serde(rename = "exp")]
    Exponential,
    /// `r`
    #[serde(rename = "linear")]
    Linear,
}

impl Gain {
    pub fn apply(self, relevance: u32) -> f64 {
        match self {
            Gain::Exponential => 2f64.powi(relevance as i32) - 1.0,
            Gain::Linear => relevance as f64,
        }
    }
}

impl FromStr for Gain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" | "exponential" => Ok(Gain::Exponential),
            "linear" => Ok(Gain::Linear),
            other => Err(Error::Config(format!(
                "unknown gain {other:?}, expected exp or linear"
            ))),
        }
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gain::Exponential => "exp",
            Gain::Linear => "linear",
        })
    }
}

/// Spread statistic reported across targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1; zero for a single value.
    Sample,
}

impl FromStr for StdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(StdKind::Population),
            "sample" => Ok(StdKind::Sample),
            other => Err(Error::Config(format!(
                "unknown std kind {other:?}, expected population or sample"
            ))),
        }
    }
}

pub fn mean_std(values: &[f64], kind: StdKind) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let std = match kind {
        StdKind::Population => (ss / n).sqrt(),
        StdKind::Sample if values.len() > 1 => (ss / (n - 1.0)).sqrt(),
        StdKind::Sample => 0.0,
    };
    (mean, std)
}

/// Graded relevance of every source for one target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRelevance {
    pub target_id: String,
    pub gamma_max: u32,
    pub relevance: BTreeMap<String, u32>,
}

impl GoldRelevance {
    pub fn get(&self, dataset_id: &str) -> Option<u32> {
        self.relevance.get(dataset_id).copied()
    }
}

/// Grades sources by their score on `target`: best gets `gamma_max`, ties broken by ascending id.
pub fn gold_relevance<S: AsRef<str>>(
    perf: &PerfTable,
    target: &str,
    sources: &[S],
    gamma_max: u32,
) -> Result<GoldRelevance> {
    if gamma_max == 0 {
        return Err(Error::Config("gamma_max must be at least 1".into()));
    }
    let mut scored = Vec::with_capacity(sources.len());
    let mut seen = BTreeSet::new();
    for s in sources {
        let s = s.as_ref();
        if !seen.insert(s) {
            return Err(Error::DuplicateId(s.to_string()));
        }
        scored.push((s, perf.get(s, target)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let relevance = scored
        .into_iter()
        .enumerate()
        .map(|(i, (id, _))| (id.to_string(), gamma_max.saturating_sub(i as u32)))
        .collect();
    Ok(GoldRelevance {
        target_id: target.to_string(),
        gamma_max,
        relevance,
    })
}

fn discount(position: usize) -> f64 {
    // 1-based position i -> log2(i + 1)
    ((position + 1) as f64).log2()
}

pub fn ndcg_at_p(predicted: &Ranking, gold: &GoldRelevance, p: usize, gain: Gain) -> Result<f64> {
    if p == 0 {
        return Err(Error::Config("p must be at least 1".into()));
    }
    let universe: BTreeSet<&str> = predicted.universe().collect();
    let gold_ids: BTreeSet<&str> = gold.relevance.keys().map(String::as_str).collect();
    if universe != gold_ids {
        let missing: Vec<_> = universe.difference(&gold_ids).collect();
        let extra: Vec<_> = gold_ids.difference(&universe).collect();
        return Err(Error::UniverseMismatch(format!(
            "target {}: no gold relevance for {missing:?}; gold lists unpredicted {extra:?}",
            gold.target_id
        )));
    }

    let dcg: f64 = predicted
        .top(p)
        .enumerate()
        .map(|(i, id)| gain.apply(gold.relevance[id]) / discount(i + 1))
        .sum();

    let mut ideal: Vec<u32> = gold.relevance.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(p)
        .enumerate()
        .map(|(i, &r)| gain.apply(r) / discount(i + 1))
        .sum();

    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvgPerf {
    pub value: f64,
    /// Number of predicted sources averaged.
    pub used: usize,
    /// Fewer than `p` datasets were ranked.
    pub short_list: bool,
}

/// Mean score on `target` of the first `min(p, |ordered|)` predicted sources.
pub fn avg_perf_at_p(
    predicted: &Ranking,
    perf: &PerfTable,
    target: &str,
    p: usize,
) -> Result<AvgPerf> {
    if p == 0 {
        return Err(Error::Config("p must be at least 1".into()));
    }
    if predicted.ordered.is_empty() {
        return Err(Error::EmptyRanking(format!(
            "no ranked sources for target {target}"
        )));
    }
    let scores = predicted
        .top(p)
        .map(|id| perf.get(id, target))
        .collect::<Result<Vec<_>>>()?;
    let short_list = scores.len() < p;
    if short_list {
        log::warn!(
            "target {target}: only {} ranked sources, averaging over them for p = {p}",
            scores.len()
        );
    }
    Ok(AvgPerf {
        value: scores.iter().sum::<f64>() / scores.len() as f64,
        used: scores.len(),
        short_list,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub p: usize,
    pub gamma_max: u32,
    pub gain: Gain,
    pub std: StdKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            p: DEFAULT_P,
            gamma_max: DEFAULT_GAMMA_MAX,
            gain: Gain::Exponential,
            std: StdKind::Population,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScores {
    pub target_id: String,
    pub ndcg: f64,
    pub avg_perf: f64,
    pub short_list: bool,
    pub unranked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    /// Sorted by target id.
    pub targets: Vec<TargetScores>,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
    pub avg_perf_mean: f64,
    pub avg_perf_std: f64,
}

impl EvalReport {
    /// CSV with header `target_id,ndcg_at_p,avg_perf_at_p`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("target_id,ndcg_at_p,avg_perf_at_p\n");
        for t in &self.targets {
            out.push_str(&format!("{},{},{}\n", t.target_id, t.ndcg, t.avg_perf));
        }
        out
    }
}

/// Scores one ranking. Gold relevance covers exactly the datasets the ranking saw.
pub fn score_target(ranking: &Ranking, perf: &PerfTable, cfg: &EvalConfig) -> Result<TargetScores> {
    let target = ranking.target_id.as_str();
    let sources: Vec<&str> = ranking.universe().collect();
    let gold = gold_relevance(perf, target, &sources, cfg.gamma_max)?;
    let ndcg = ndcg_at_p(ranking, &gold, cfg.p, cfg.gain)?;
    let avg = avg_perf_at_p(ranking, perf, target, cfg.p)?;
    Ok(TargetScores {
        target_id: target.to_string(),
        ndcg,
        avg_perf: avg.value,
        short_list: avg.short_list,
        unranked: ranking.unranked.len(),
    })
}

/// Per-target scores plus their unweighted mean and spread.
pub fn split_report(
    rankings: &[Ranking],
    perf: &PerfTable,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut by_target = BTreeMap::new();
    for r in rankings {
        if by_target.insert(r.target_id.as_str(), r).is_some() {
            return Err(Error::DuplicateId(r.target_id.clone()));
        }
    }
    if by_target.is_empty() {
        return Err(Error::EmptyRanking("no rankings to evaluate".into()));
    }
    let targets = by_target
        .values()
        .map(|r| score_target(r, perf, cfg))
        .collect::<Result<Vec<_>>>()?;
    let ndcgs: Vec<f64> = targets.iter().map(|t| t.ndcg).collect();
    let avgs: Vec<f64> = targets.iter().map(|t| t.avg_perf).collect();
    let (ndcg_mean, ndcg_std) = mean_std(&ndcgs, cfg.std);
    let (avg_perf_mean, avg_perf_std) = mean_std(&avgs, cfg.std);
    Ok(EvalReport {
        config: *cfg,
        targets,
        ndcg_mean,
        ndcg_std,
        avg_perf_mean,
        avg_perf_std,
    })
}

/// Size of the intersection of the two top-p prefixes.
pub fn top_p_overlap(a: &Ranking, b: &Ranking, p: usize) -> usize {
    let top_a: BTreeSet<&str> = a.top(p).collect();
    b.top(p).filter(|id| top_a.contains(id)).count()
}

/// Datasets in the top p of `next` that were already in the top p of `prev`.
pub fn persistent_candidates(prev: &Ranking, next: &Ranking, p: usize) -> usize {
    top_p_overlap(prev, next, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDelta {
    pub target_id: String,
    pub ndcg_delta: f64,
    pub avg_perf_delta: f64,
}

/// `a - b` for every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDelta {
    pub p: usize,
    pub ndcg_mean_delta: f64,
    pub avg_perf_mean_delta: f64,
    pub targets: Vec<TargetDelta>,
}

pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<RunDelta> {
    if a.config.p != b.config.p {
        return Err(Error::ReportMismatch(format!(
            "reports use p = {} and p = {}",
            a.config.p, b.config.p
        )));
    }
    let ids_a: Vec<&str> = a.targets.iter().map(|t| t.target_id.as_str()).collect();
    let ids_b: Vec<&str> = b.targets.iter().map(|t| t.target_id.as_str()).collect();
    let set_a: BTreeSet<&str> = ids_a.iter().copied().collect();
    let set_b: BTreeSet<&str> = ids_b.iter().copied().collect();
    if set_a != set_b || set_a.len() != ids_a.len() || set_b.len() != ids_b.len() {
        return Err(Error::ReportMismatch(
            "reports cover different targets".into(),
        ));
    }
    if a.config.gain != b.config.gain || a.config.gamma_max != b.config.gamma_max {
        log::warn!("comparing reports with different gain or gamma_max settings");
    }
    let by_id: BTreeMap<&str, &TargetScores> = b
        .targets
        .iter()
        .map(|t| (t.target_id.as_str(), t))
        .collect();
    let targets = a
        .targets
        .iter()
        .map(|ta| {
            let tb = by_id[ta.target_id.as_str()];
            TargetDelta {
                target_id: ta.target_id.clone(),
                ndcg_delta: ta.ndcg - tb.ndcg,
                avg_perf_delta: ta.avg_perf - tb.avg_perf,
            }
        })
        .collect();
    Ok(RunDelta {
        p: a.config.p,
        ndcg_mean_delta: a.ndcg_mean - b.ndcg_mean,
        avg_perf_mean_delta: a.avg_perf_mean - b.avg_perf_mean,
        targets,
    })
}
