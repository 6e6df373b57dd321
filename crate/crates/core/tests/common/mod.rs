//! Generators and brute-force oracles shared by the integration tests.
//!
//! Oracles here deliberately avoid the library's search, tally and metric code.

#![allow(dead_code)]

use std::collections::HashMap;

use nnrank::{DatasetMeta, EmbeddingMatrix, SourcePool};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn meta(id: &str, iso: &str) -> DatasetMeta {
    DatasetMeta {
        dataset_id: id.to_string(),
        iso639_3: iso.to_string(),
        model_id: "synthetic".to_string(),
        layer: 8,
        corpus_tag: "test".to_string(),
        line_count: 0,
    }
}

/// Three-letter code for dataset `i`, cycling through a small alphabet so some datasets share a language.
pub fn iso_for(i: usize) -> String {
    const ISOS: [&str; 6] = ["eng", "deu", "fra", "spa", "ita", "por"];
    ISOS[i % ISOS.len()].to_string()
}

pub fn dataset_id(i: usize) -> String {
    format!("ds{i:03}")
}

/// Random values. `integral` draws small integers so that many scores tie exactly.
pub fn random_matrix(
    rng: &mut TestRng,
    rows: usize,
    dim: usize,
    integral: bool,
) -> EmbeddingMatrix {
    let data = (0..rows * dim)
        .map(|_| {
            if integral {
                rng.gen_range(-2i32..=2) as f32
            } else {
                rng.gen_range(-1.0f32..1.0)
            }
        })
        .collect();
    EmbeddingMatrix::new(rows, dim, data).unwrap()
}

pub fn random_pool(
    rng: &mut TestRng,
    datasets: usize,
    max_rows: usize,
    dim: usize,
    integral: bool,
) -> SourcePool {
    let parts = (0..datasets)
        .map(|i| {
            let rows = rng.gen_range(1..=max_rows);
            (
                random_matrix(rng, rows, dim, integral),
                meta(&dataset_id(i), &iso_for(i)),
            )
        })
        .collect();
    SourcePool::from_datasets(parts).unwrap()
}

/// Brute force: score every visible row with a plain f64 sum, sort everything, keep k.
///
/// `excluded` lists dataset ids to skip. Returns (global row, dataset id, score).
pub fn oracle_top_k(
    query: &[f32],
    pool: &SourcePool,
    excluded: &[String],
    k: usize,
) -> Vec<(usize, String, f64)> {
    let mut all = Vec::new();
    let mut row = 0;
    for e in pool.entries() {
        for _ in 0..e.count {
            if !excluded.contains(&e.meta.dataset_id) {
                let r = pool.matrix().row(row);
                let mut s = 0.0f64;
                for j in 0..query.len() {
                    s += f64::from(query[j]) * f64::from(r[j]);
                }
                all.push((row, e.meta.dataset_id.clone(), s));
            }
            row += 1;
        }
    }
    all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Per-dataset counts from the brute-force neighbors of every target row.
pub fn oracle_tally(
    targets: &EmbeddingMatrix,
    pool: &SourcePool,
    excluded: &[String],
    k: usize,
) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = pool
        .entries()
        .iter()
        .filter(|e| !excluded.contains(&e.meta.dataset_id))
        .map(|e| (e.meta.dataset_id.clone(), 0))
        .collect();
    for i in 0..targets.rows() {
        for (_, id, _) in oracle_top_k(targets.row(i), pool, excluded, k) {
            *counts.get_mut(&id).unwrap() += 1;
        }
    }
    counts
}

/// Direct NDCG@p: grade sources by score (ties by id), then evaluate the formula literally.
pub fn oracle_ndcg(
    predicted: &[&str],
    scores: &HashMap<String, f64>,
    p: usize,
    gamma_max: u32,
    exponential: bool,
) -> f64 {
    let mut by_score: Vec<(&String, f64)> = scores.iter().map(|(k, v)| (k, *v)).collect();
    by_score.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
    let mut rel: HashMap<&str, f64> = HashMap::new();
    for (pos, (id, _)) in by_score.iter().enumerate() {
        let g = if (pos as u32) < gamma_max {
            (gamma_max - pos as u32) as f64
        } else {
            0.0
        };
        rel.insert(id.as_str(), g);
    }
    let gain = |r: f64| if exponential { 2f64.powf(r) - 1.0 } else { r };
    let mut dcg = 0.0;
    for i in 1..=p {
        if let Some(id) = predicted.get(i - 1) {
            dcg += gain(rel[id]) / ((i + 1) as f64).log2();
        }
    }
    let mut ideal: Vec<f64> = rel.values().copied().collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut idcg = 0.0;
    for i in 1..=p.min(ideal.len()) {
        idcg += gain(ideal[i - 1]) / ((i + 1) as f64).log2();
    }
    dcg / idcg
}

/// Source datasets as Gaussian clusters around `separation · e_j`, plus the centroids.
pub struct ClusterCorpus {
    pub pool: SourcePool,
    pub centroids: Vec<Vec<f32>>,
    pub sigma: f32,
}

pub fn cluster_corpus(
    rng: &mut TestRng,
    datasets: usize,
    rows_per: usize,
    dim: usize,
    separation: f32,
) -> ClusterCorpus {
    assert!(datasets <= dim);
    let sigma = 1.0f32;
    let noise = Normal::new(0.0f32, sigma).unwrap();
    let mut centroids = Vec::new();
    let mut parts = Vec::new();
    for j in 0..datasets {
        let mut c = vec![0.0f32; dim];
        c[j] = separation * sigma;
        let rows: Vec<Vec<f32>> = (0..rows_per)
            .map(|_| c.iter().map(|&x| x + noise.sample(rng)).collect())
            .collect();
        parts.push((
            EmbeddingMatrix::from_rows(&rows).unwrap(),
            meta(&dataset_id(j), "xxx"),
        ));
        centroids.push(c);
    }
    ClusterCorpus {
        pool: SourcePool::from_datasets(parts).unwrap(),
        centroids,
        sigma,
    }
}

impl ClusterCorpus {
    pub fn targets_from(&self, rng: &mut TestRng, cluster: usize, rows: usize) -> EmbeddingMatrix {
        let noise = Normal::new(0.0f32, self.sigma).unwrap();
        let c = &self.centroids[cluster];
        let data: Vec<Vec<f32>> = (0..rows)
            .map(|_| c.iter().map(|&x| x + noise.sample(rng)).collect())
            .collect();
        EmbeddingMatrix::from_rows(&data).unwrap()
    }
}

/// Target metadata whose language matches no pool dataset.
pub fn target_meta(id: &str) -> DatasetMeta {
    meta(id, "tgt")
}
