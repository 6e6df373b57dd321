//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use nnrank::ablation::{run_ablation, AblationPlan};
use nnrank::diversity::token_diversity;
use nnrank::embedding::{decode, read_embedding_file, write_embedding_file};
use nnrank::eval::{
    avg_perf_at_p, gold_relevance, ndcg_at_p, split_report, EvalConfig, Gain, PerfTable,
};
use nnrank::knn::{batch_top_k, top_k, SearchConfig};
use nnrank::ranker::{count_unranked, rank, RankRunConfig, Ranking, Tally};
use nnrank::{EmbeddingMatrix, Error, SourcePool};
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:?}, limit {limit:?}"))
    }
}

/// 1. top_k equals a full-sort oracle on 200 seeded instances.
fn knn_exactness() -> Outcome {
    let started = Instant::now();
    let mut r = rng(1);
    let mut checked_ties = 0usize;
    for instance in 0..200 {
        let dim = r.gen_range(1..=32);
        let datasets = r.gen_range(1..=8);
        let integral = instance % 2 == 0;
        let pool = random_pool(&mut r, datasets, 500 / datasets, dim, integral);
        ensure!(pool.rows() <= 500, "instance {instance}: pool too large");
        let k = [1, 5, 17][instance % 3];
        let cfg = SearchConfig {
            k,
            normalize: false,
        };
        let view = pool.full_view();
        for _ in 0..5 {
            let q = random_matrix(&mut r, 1, dim, integral);
            let got = top_k(q.row(0), &view, &cfg).map_err(|e| e.to_string())?;
            let want = oracle_top_k(q.row(0), &pool, &[], k);
            ensure!(
                got.len() == want.len(),
                "instance {instance}: {} hits vs {}",
                got.len(),
                want.len()
            );
            for (g, w) in got.iter().zip(&want) {
                ensure!(
                    g.source_row == w.0
                        && pool.entry(g.dataset).dataset_id() == w.1
                        && g.score == w.2,
                    "instance {instance}: hit {:?} vs oracle {:?}",
                    g,
                    w
                );
            }
            checked_ties += want.windows(2).filter(|w| w[0].2 == w[1].2).count();
        }
    }
    ensure!(checked_ties > 0, "no tied scores were exercised");
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!(
        "200 instances x 5 queries, {checked_ties} tied pairs, {took:.2?}"
    ))
}

/// 2. Sum of tally = k_effective x rows used; permuting target rows changes nothing.
fn tally_conservation() -> Outcome {
    let started = Instant::now();
    let mut r = rng(2);
    for run in 0..100 {
        let dim = r.gen_range(1..=8);
        let datasets = r.gen_range(1..=6);
        let pool = random_pool(&mut r, datasets, 15, dim, run % 3 == 0);
        let n = r.gen_range(1..=40);
        let target = random_matrix(&mut r, n, dim, run % 3 == 0);
        let cfg = RankRunConfig {
            k: r.gen_range(1..=12),
            sample_size: (run % 4 == 0).then(|| r.gen_range(1..=50)),
            seed: Some(run as u64),
            ..Default::default()
        };
        let t_meta = target_meta("T");
        let ranking = rank(&target, &t_meta, &pool, &cfg).map_err(|e| e.to_string())?;
        let k_eff = cfg.k.min(pool.rows());
        let used = cfg.sample_size.map_or(n, |s| s.min(n));
        ensure!(
            ranking.k_effective == k_eff,
            "run {run}: k_effective {}",
            ranking.k_effective
        );
        ensure!(
            ranking.rows_used == used,
            "run {run}: rows_used {}",
            ranking.rows_used
        );
        let total = ranking.tally().total();
        ensure!(
            total == (k_eff * used) as u64,
            "run {run}: tally {total} != {k_eff} x {used}"
        );
        if cfg.sample_size.is_none() {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut r);
            let permuted = target.select_rows(&order).unwrap();
            let again = rank(&permuted, &t_meta, &pool, &cfg).map_err(|e| e.to_string())?;
            ensure!(
                again == ranking,
                "run {run}: permuted targets changed the ranking"
            );
        }
    }
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("100 runs, {took:.2?}"))
}

/// 3. Targets from cluster j rank dataset j first.
fn rank_one_recovery() -> Outcome {
    let mut r = rng(3);
    let corpus = cluster_corpus(&mut r, 8, 100, 32, 10.0);
    let cfg = RankRunConfig::default();
    for j in 0..8 {
        let targets = corpus.targets_from(&mut r, j, 100);
        let ranking =
            rank(&targets, &target_meta("T"), &corpus.pool, &cfg).map_err(|e| e.to_string())?;
        ensure!(
            ranking.ordered[0].dataset_id == dataset_id(j),
            "cluster {j}: ranked {} first",
            ranking.ordered[0].dataset_id
        );
    }

    // Targets on the centroids of a pool with bounded noise: every neighbor must come from j.
    let bounded: Vec<_> = (0..8)
        .map(|j| {
            let rows: Vec<Vec<f32>> = (0..20)
                .map(|_| {
                    (0..32)
                        .map(|d| if d == j { 10.0 } else { 0.0 } + r.gen_range(-1.0f32..=1.0))
                        .collect()
                })
                .collect();
            (
                EmbeddingMatrix::from_rows(&rows).unwrap(),
                meta(&dataset_id(j), "xxx"),
            )
        })
        .collect();
    let pool = SourcePool::from_datasets(bounded).unwrap();
    for j in 0..8 {
        let c = corpus.centroids[j].clone();
        let targets = EmbeddingMatrix::from_rows(&vec![c; 10]).unwrap();
        let ranking = rank(&targets, &target_meta("T"), &pool, &cfg).map_err(|e| e.to_string())?;
        ensure!(
            ranking.ordered.len() == 1
                && ranking.ordered[0].dataset_id == dataset_id(j)
                && ranking.ordered[0].count == 50,
            "centroid {j}: {:?}",
            ranking.ordered
        );
    }
    Ok("8/8 Gaussian clusters, 8/8 centroid targets".into())
}

/// 4. Two period-token instances: diversity 4, union 7.
fn diversity_worked_example() -> Outcome {
    let hits = vec![
        vec!["es_ancora", "es_gsd", "it_isdt", "ca_ancora", "it_isdt"],
        vec!["it_isdt", "sl_ssj", "it_isdt", "ru_syntagrus", "cs_cac"],
    ];
    let stats = token_diversity(&hits, &[".", "."]).map_err(|e| e.to_string())?;
    let s = &stats["."];
    ensure!(s.diversity == 4.0, "diversity {}", s.diversity);
    ensure!(s.union_count == 7, "union {}", s.union_count);
    ensure!(s.frequency == 2, "frequency {}", s.frequency);
    Ok("diversity 4.0, union 7".into())
}

fn ranking_from_order(target: &str, order: &[&str]) -> Ranking {
    let n = order.len() as u64;
    let counts = order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), n - i as u64))
        .collect();
    Ranking::from_tally(&Tally { counts }, target, RankRunConfig::default(), 1, 1)
}

/// 5. Average F1@2 on three sources and five targets.
fn avg_perf_worked_example() -> Outcome {
    let scores = [
        (
            "de",
            [("en", 70.0), ("es", 50.0), ("fr", 60.0)],
            ["en", "fr", "es"],
            65.0,
        ),
        (
            "cs",
            [("en", 40.0), ("es", 45.0), ("fr", 55.0)],
            ["fr", "es", "en"],
            50.0,
        ),
        (
            "ig",
            [("en", 30.0), ("es", 20.0), ("fr", 10.0)],
            ["es", "en", "fr"],
            25.0,
        ),
        (
            "ga",
            [("en", 62.0), ("es", 58.0), ("fr", 61.0)],
            ["en", "es", "fr"],
            60.0,
        ),
        (
            "fi",
            [("en", 80.0), ("es", 71.0), ("fr", 75.0)],
            ["fr", "en", "es"],
            77.5,
        ),
    ];
    let mut perf = PerfTable::new();
    for (target, row, _, _) in &scores {
        for (source, v) in row {
            perf.insert(source, target, *v).unwrap();
        }
    }
    let mut per_target = Vec::new();
    for (target, _, predicted, want) in &scores {
        let ranking = ranking_from_order(target, predicted);
        let got = avg_perf_at_p(&ranking, &perf, target, 2).map_err(|e| e.to_string())?;
        ensure!(got.value == *want, "{target}: {} != {want}", got.value);
        per_target.push(ranking);
    }
    let report = split_report(
        &per_target,
        &perf,
        &EvalConfig {
            p: 2,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        report.avg_perf_mean == 55.5,
        "Average F1@2 {}",
        report.avg_perf_mean
    );
    Ok("German 65.0, split Average F1@2 55.5".into())
}

/// 6. NDCG against an independent formula, both gains; unranked datasets score 0.
fn ndcg_oracle() -> Outcome {
    let mut r = rng(6);
    let ids: Vec<String> = (0..12).map(dataset_id).collect();
    let mut worst = 0.0f64;
    for case in 0..20 {
        let scores: HashMap<String, f64> = ids
            .iter()
            .map(|id| (id.clone(), (r.gen_range(0..40) as f64) / 2.0))
            .collect();
        let mut perf = PerfTable::new();
        for (id, v) in &scores {
            perf.insert(id, "t", *v).unwrap();
        }
        let mut order: Vec<&str> = ids.iter().map(String::as_str).collect();
        order.shuffle(&mut r);
        let n_ranked = r.gen_range(1..=12);
        let counts = order
            .iter()
            .enumerate()
            .map(|(i, id)| {
                (
                    id.to_string(),
                    if i < n_ranked {
                        (n_ranked - i) as u64
                    } else {
                        0
                    },
                )
            })
            .collect();
        let ranking = Ranking::from_tally(&Tally { counts }, "t", RankRunConfig::default(), 1, 1);
        let predicted: Vec<&str> = ranking.ordered_ids().collect();
        let gold = gold_relevance(&perf, "t", &ids, 10).map_err(|e| e.to_string())?;
        let p = [1, 3, 5, 12][case % 4];
        for (gain, exp) in [(Gain::Exponential, true), (Gain::Linear, false)] {
            let got = ndcg_at_p(&ranking, &gold, p, gain).map_err(|e| e.to_string())?;
            let want = oracle_ndcg(&predicted, &scores, p, 10, exp);
            worst = worst.max((got - want).abs());
            ensure!(
                (got - want).abs() <= 1e-9,
                "case {case} {gain}: {got} vs {want}"
            );
        }
    }

    let mut perf = PerfTable::new();
    for (i, id) in ids.iter().enumerate() {
        perf.insert(id, "t", i as f64).unwrap();
    }
    let gold = gold_relevance(&perf, "t", &ids, 10).unwrap();
    let mut ideal: Vec<&str> = ids.iter().map(String::as_str).collect();
    ideal.reverse();
    let ideal_ranking = ranking_from_order("t", &ideal);
    for gain in [Gain::Exponential, Gain::Linear] {
        let v = ndcg_at_p(&ideal_ranking, &gold, 5, gain).unwrap();
        ensure!((v - 1.0).abs() <= 1e-12, "ideal order gave {v}");
    }

    // Best dataset left unranked: it contributes nothing, identical to a 0-relevance dataset.
    let counts: BTreeMap<String, u64> = ids
        .iter()
        .map(|id| (id.clone(), if id == &ids[11] { 0 } else { 1 }))
        .collect();
    let partial = Ranking::from_tally(&Tally { counts }, "t", RankRunConfig::default(), 1, 1);
    let predicted: Vec<&str> = partial.ordered_ids().collect();
    let scores: HashMap<String, f64> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i as f64))
        .collect();
    let got = ndcg_at_p(&partial, &gold, 12, Gain::Exponential).unwrap();
    let want = oracle_ndcg(&predicted, &scores, 12, 10, true);
    ensure!((got - want).abs() <= 1e-9, "unranked case {got} vs {want}");
    ensure!(got < 1.0, "unranked best dataset still scored {got}");
    Ok(format!("20 cases x 2 gains, max |diff| {worst:.1e}"))
}

/// 7. Ablation: full-size sample reproduces the main run; size 10 leaves >= 28 of 78 unranked.
fn ablation_harness() -> Outcome {
    let mut r = rng(7);
    let dim = 16;
    let pool = random_pool(&mut r, 78, 12, dim, false);
    let n_tgt = 300;
    let target = random_matrix(&mut r, n_tgt, dim, false);
    let t_meta = target_meta("T");
    let mut perf = PerfTable::new();
    for e in pool.entries() {
        perf.insert(e.dataset_id(), "T", r.gen_range(0.0..100.0))
            .unwrap();
    }
    let cfg = RankRunConfig::default();
    let eval = EvalConfig::default();

    let full_plan = AblationPlan {
        sample_sizes: vec![n_tgt],
        seeds: vec![11],
    };
    let rep = run_ablation(&target, &t_meta, &pool, &perf, &full_plan, &cfg, &eval)
        .map_err(|e| e.to_string())?;
    let run = &rep.sizes[0].runs[0];
    ensure!(
        run.metrics == rep.main,
        "full-size run {:?} != main {:?}",
        run.metrics,
        rep.main
    );
    ensure!(
        run.overlap_with_main == 5,
        "overlap {}",
        run.overlap_with_main
    );

    let small_plan = AblationPlan {
        sample_sizes: vec![10, 50],
        seeds: vec![0, 1, 2],
    };
    let rep = run_ablation(&target, &t_meta, &pool, &perf, &small_plan, &cfg, &eval)
        .map_err(|e| e.to_string())?;
    for run in &rep.sizes[0].runs {
        ensure!(
            run.metrics.unranked >= 28,
            "seed {}: {} unranked",
            run.seed,
            run.metrics.unranked
        );
    }
    let direct = rank(
        &target,
        &t_meta,
        &pool,
        &RankRunConfig {
            sample_size: Some(10),
            seed: Some(0),
            ..Default::default()
        },
    )
    .unwrap();
    ensure!(
        count_unranked(&direct) >= 28,
        "direct size-10 run: {}",
        count_unranked(&direct)
    );

    let again = run_ablation(&target, &t_meta, &pool, &perf, &small_plan, &cfg, &eval)
        .map_err(|e| e.to_string())?;
    let a = serde_json::to_vec(&rep).unwrap();
    let b = serde_json::to_vec(&again).unwrap();
    ensure!(a == b, "repeated ablation differs");
    Ok(format!(
        "overlap 5, min unranked at size 10 = {}, {} report bytes identical",
        rep.sizes[0]
            .runs
            .iter()
            .map(|r| r.metrics.unranked)
            .min()
            .unwrap(),
        a.len()
    ))
}

/// 8. 1,000 random files round-trip bitwise; corrupt inputs give named errors.
fn file_format() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(8);
    for i in 0..1000 {
        let rows = r.gen_range(1..=8);
        let dim = r.gen_range(1..=16);
        let data: Vec<f32> = (0..rows * dim)
            .map(|_| loop {
                let v = f32::from_bits(r.gen());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let m = EmbeddingMatrix::new(rows, dim, data).unwrap();
        let mut md = meta(&format!("file{i}"), &iso_for(i));
        md.layer = r.gen_range(0..13);
        md.line_count = r.gen();
        let path = dir.path().join(format!("{i}.nnrk"));
        write_embedding_file(&m, &md, &path).map_err(|e| e.to_string())?;
        let (back, back_meta) = read_embedding_file(&path).map_err(|e| e.to_string())?;
        let same = back.rows() == rows
            && back.dim() == dim
            && back
                .as_slice()
                .iter()
                .zip(m.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same && back_meta == md, "file {i} did not round-trip");
    }

    let m = EmbeddingMatrix::new(2, 3, vec![1.0; 6]).unwrap();
    let good = nnrank::embedding::encode(&m, &meta("x", "eng")).unwrap();
    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"XXXX");
    ensure!(
        matches!(decode(&bad_magic), Err(Error::BadMagic { .. })),
        "bad magic not detected"
    );
    let short = &good[..good.len() - 4];
    ensure!(
        matches!(
            decode(short),
            Err(Error::SizeMismatch {
                expected: 24,
                actual: 20
            })
        ),
        "short payload not detected"
    );
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    ensure!(
        matches!(decode(&bad_version), Err(Error::UnsupportedVersion(9))),
        "bad version not detected"
    );
    Ok("1000 files bitwise equal; bad magic, short payload, bad version rejected".into())
}

/// 9. Same output with 1, 4 and all threads.
fn parallel_determinism() -> Outcome {
    let mut r = rng(3);
    let corpus = cluster_corpus(&mut r, 8, 100, 32, 10.0);
    let targets: Vec<EmbeddingMatrix> = (0..8)
        .map(|j| corpus.targets_from(&mut r, j, 100))
        .collect();
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cfg = RankRunConfig::default();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let view = corpus.pool.full_view();
            targets
                .iter()
                .map(|t| {
                    let hits = batch_top_k(t, &view, &cfg.search_config()).unwrap();
                    let ranking = rank(t, &target_meta("T"), &corpus.pool, &cfg).unwrap();
                    (hits, ranking)
                })
                .collect::<Vec<_>>()
        })
    };
    let one = run(1);
    for threads in [4, 8, max] {
        ensure!(
            run(threads) == one,
            "{threads} threads differ from 1 thread"
        );
    }
    Ok(format!("threads 1, 4, 8, {max} (max) identical"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 k-NN exactness", knn_exactness),
        ("2 tally conservation", tally_conservation),
        ("3 rank-1 recovery", rank_one_recovery),
        ("4 diversity worked example", diversity_worked_example),
        ("5 avg-perf worked example", avg_perf_worked_example),
        ("6 NDCG oracle", ndcg_oracle),
        ("7 ablation harness", ablation_harness),
        ("8 file format", file_format),
        ("9 determinism under parallelism", parallel_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
