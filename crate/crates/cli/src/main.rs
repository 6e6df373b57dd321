//! `nnrank` command-line entry point.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use nnrank::ablation::{AblationPlan, DEFAULT_SAMPLE_SIZES, DEFAULT_SEEDS};
use nnrank::diversity;
use nnrank::eval::{
    EvalConfig, EvalReport, Gain, PerfTable, StdKind, DEFAULT_GAMMA_MAX, DEFAULT_P,
};
use nnrank::knn::{read_hit_log, write_hit_log};
use nnrank::pool::{build_pool, read_manifest};
use nnrank::ranker::{
    rank_with_hits, RankRunConfig, Ranking, DEFAULT_K, DEFAULT_LAYER, DEFAULT_MAX_LINES,
};
use nnrank::{
    compare_runs, rank, read_embedding_file, run_ablation, split_report, Error, SourcePool,
};
use serde::Serialize;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "nnrank",
    version,
    about = "Rank source datasets for cross-lingual transfer by nearest-neighbor voting"
)]
struct Cli {
    /// Worker threads for the neighbor search (0 = all cores).
    #[arg(long, global = true, env = "NNRANK_THREADS")]
    threads: Option<usize>,

    /// Print every effective default as JSON and exit.
    #[arg(long)]
    config_dump: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Concatenate the embedding files listed in a manifest into a pool cache.
    BuildPool {
        /// JSON array of embedding file paths, relative to the manifest's directory.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the pool's datasets for one target embedding file.
    Rank {
        #[command(flatten)]
        io: RankIo,
        #[command(flatten)]
        opts: RankOpts,
        /// Write every target row's neighbors as JSON lines.
        #[arg(long)]
        hitlog: Option<PathBuf>,
        /// Ranking JSON; a `.csv` summary is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a directory of ranking JSON files against measured performance.
    Evaluate {
        #[arg(long)]
        rankings: PathBuf,
        #[command(flatten)]
        eval: EvalOpts,
        /// Directory receiving report.json and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank from seeded subsamples of the target rows at several sizes.
    Ablate {
        #[command(flatten)]
        io: RankIo,
        #[command(flatten)]
        opts: RankOpts,
        #[command(flatten)]
        eval: EvalOpts,
        /// Strictly increasing sample sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-token count of distinct neighbor datasets.
    Diversity {
        /// JSON-lines hit log written by `rank --hitlog`.
        #[arg(long)]
        hitlog: PathBuf,
        /// Tab-separated `target_row<TAB>token` with a header line.
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metric differences between two evaluation reports (a - b).
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RankIo {
    /// Pool cache written by `build-pool`.
    #[arg(long)]
    pool: PathBuf,
    /// Target embedding file.
    #[arg(long)]
    target: PathBuf,
}

/// Flags left unset fall back to `--config`, then to the built-in defaults.
#[derive(Args, Debug)]
struct RankOpts {
    /// JSON run configuration, or a ranking output whose embedded config is reused.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    layer: Option<u32>,
    #[arg(long)]
    max_lines: Option<u64>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop source datasets sharing the target's language (the default).
    #[arg(long, action = ArgAction::SetTrue, conflicts_with = "include_same_iso")]
    exclude_same_iso: bool,
    #[arg(long, action = ArgAction::SetTrue)]
    include_same_iso: bool,
    /// Drop a source dataset by id; repeatable.
    #[arg(long = "exclude-id")]
    exclude_ids: Vec<String>,
    /// Cosine instead of raw inner product.
    #[arg(long, action = ArgAction::SetTrue)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct EvalOpts {
    /// Performance table, header `source_id,target_id,score`.
    #[arg(long)]
    perf: PathBuf,
    #[arg(long, default_value_t = DEFAULT_P)]
    p: usize,
    #[arg(long, default_value_t = DEFAULT_GAMMA_MAX)]
    gamma_max: u32,
    /// exp | linear
    #[arg(long, default_value = "exp")]
    gain: Gain,
    /// population | sample
    #[arg(long, default_value = "population")]
    std: StdKind,
}

impl EvalOpts {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            p: self.p,
            gamma_max: self.gamma_max,
            gain: self.gain,
            std: self.std,
        }
    }
}

impl RankOpts {
    fn resolve(&self) -> nnrank::Result<RankRunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_rank_config(path)?,
            None => RankRunConfig::default(),
        };
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(layer) = self.layer {
            cfg.layer = layer;
        }
        if let Some(m) = self.max_lines {
            cfg.max_lines = m;
        }
        if self.sample_size.is_some() {
            cfg.sample_size = self.sample_size;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.exclude_same_iso {
            cfg.exclude_same_iso = true;
        }
        if self.include_same_iso {
            cfg.exclude_same_iso = false;
        }
        for id in &self.exclude_ids {
            if !cfg.exclude_ids.contains(id) {
                cfg.exclude_ids.push(id.clone());
            }
        }
        if self.normalize {
            cfg.normalize = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_rank_config(path: &Path) -> nnrank::Result<RankRunConfig> {
    let value: serde_json::Value = serde_json::from_str(&read_text(path)?)?;
    let value = match value.get("config").or_else(|| value.get("rank_config")) {
        Some(inner) => inner.clone(),
        None => value,
    };
    Ok(serde_json::from_value(value)?)
}

#[derive(Serialize)]
struct Defaults {
    version: &'static str,
    rank: RankRunConfig,
    eval: EvalConfig,
    ablation: AblationPlan,
    threads: usize,
}

fn defaults(threads: usize) -> Defaults {
    Defaults {
        version: env!("CARGO_PKG_VERSION"),
        rank: RankRunConfig::default(),
        eval: EvalConfig::default(),
        ablation: AblationPlan::default(),
        threads,
    }
}

fn long_version() -> String {
    format!(
        "{}\ndefaults: k={} layer={} p={} gamma_max={} max_lines={} sample_sizes={:?} seeds={:?}",
        env!("CARGO_PKG_VERSION"),
        DEFAULT_K,
        DEFAULT_LAYER,
        DEFAULT_P,
        DEFAULT_GAMMA_MAX,
        DEFAULT_MAX_LINES,
        DEFAULT_SAMPLE_SIZES,
        DEFAULT_SEEDS,
    )
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> nnrank::Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> nnrank::Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> nnrank::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load_pool(path: &Path) -> nnrank::Result<SourcePool> {
    let pool = SourcePool::read_cache(path)?;
    log::info!(
        "pool: {} datasets, {} rows, dim {}",
        pool.len(),
        pool.rows(),
        pool.dim()
    );
    Ok(pool)
}

fn cmd_build_pool(manifest: &Path, out: &Path) -> nnrank::Result<()> {
    let files = read_manifest(manifest)?;
    let pool = build_pool(&files)?;
    pool.write_cache(out)?;
    log::info!(
        "wrote {} datasets ({} rows) to {}",
        pool.len(),
        pool.rows(),
        out.display()
    );
    Ok(())
}

fn cmd_rank(io: &RankIo, opts: &RankOpts, hitlog: Option<&Path>, out: &Path) -> nnrank::Result<()> {
    let cfg = opts.resolve()?;
    let pool = load_pool(&io.pool)?;
    let (target, meta) = read_embedding_file(&io.target)?;
    let ranking = match hitlog {
        Some(path) => {
            let (ranking, records) = rank_with_hits(&target, &meta, &pool, &cfg)?;
            let mut buf = Vec::new();
            write_hit_log(&mut buf, &records)?;
            write_bytes(path, &buf)?;
            ranking
        }
        None => rank(&target, &meta, &pool, &cfg)?,
    };
    write_bytes(out, to_json(&ranking)?.as_bytes())?;
    let csv_path = out.with_extension("csv");
    if csv_path != out {
        write_bytes(&csv_path, ranking.to_csv().as_bytes())?;
    }
    Ok(())
}

fn read_rankings(dir: &Path) -> nnrank::Result<Vec<Ranking>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyRanking(format!(
            "no ranking .json files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&read_text(p)?)?))
        .collect()
}

fn cmd_evaluate(rankings: &Path, eval: &EvalOpts, out: &Path) -> nnrank::Result<()> {
    let rankings = read_rankings(rankings)?;
    let perf = PerfTable::read_csv(&eval.perf)?;
    let report = split_report(&rankings, &perf, &eval.config())?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_bytes(&out.join("report.json"), to_json(&report)?.as_bytes())?;
    write_bytes(&out.join("summary.csv"), report.summary_csv().as_bytes())?;
    log::info!(
        "{} targets, NDCG@{} mean {:.4}, AvgPerf@{} mean {:.4}",
        report.targets.len(),
        eval.p,
        report.ndcg_mean,
        eval.p,
        report.avg_perf_mean
    );
    Ok(())
}

fn cmd_ablate(
    io: &RankIo,
    opts: &RankOpts,
    eval: &EvalOpts,
    sizes: Option<&[usize]>,
    seeds: Option<&[u64]>,
    out: &Path,
) -> nnrank::Result<()> {
    let cfg = opts.resolve()?;
    let defaults = AblationPlan::default();
    let plan = AblationPlan {
        sample_sizes: sizes.map_or(defaults.sample_sizes, <[usize]>::to_vec),
        seeds: seeds.map_or(defaults.seeds, <[u64]>::to_vec),
    };
    let pool = load_pool(&io.pool)?;
    let (target, meta) = read_embedding_file(&io.target)?;
    let perf = PerfTable::read_csv(&eval.perf)?;
    let report = run_ablation(&target, &meta, &pool, &perf, &plan, &cfg, &eval.config())?;
    write_bytes(out, to_json(&report)?.as_bytes())
}

fn read_tokens(path: &Path) -> nnrank::Result<Vec<(usize, String)>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == "target_row\ttoken" => {}
        other => {
            return Err(Error::Config(format!(
                "{}: expected header \"target_row<TAB>token\", found {:?}",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let (row, token) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!("{}: line {} has no tab", path.display(), i + 2))
            })?;
            let row = row.parse().map_err(|_| {
                Error::Config(format!(
                    "{}: line {}: bad row {row:?}",
                    path.display(),
                    i + 2
                ))
            })?;
            Ok((row, token.to_string()))
        })
        .collect()
}

fn cmd_diversity(hitlog: &Path, tokens: &Path, out: &Path) -> nnrank::Result<()> {
    let file = fs::File::open(hitlog).map_err(|e| io_err(hitlog, e))?;
    let records = read_hit_log(BufReader::new(file))?;
    let by_row: std::collections::HashMap<usize, Vec<&str>> = records
        .iter()
        .map(|r| {
            (
                r.target_row,
                r.hits.iter().map(|h| h.dataset_id.as_str()).collect(),
            )
        })
        .collect();
    let mut hits = Vec::new();
    let mut toks = Vec::new();
    for (row, token) in read_tokens(tokens)? {
        // rows missing from a subsampled hit log are skipped
        if let Some(h) = by_row.get(&row) {
            hits.push(h.clone());
            toks.push(token);
        }
    }
    let stats = diversity::token_diversity(&hits, &toks)?;
    write_bytes(out, diversity::to_csv(&stats)?.as_bytes())
}

fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> nnrank::Result<()> {
    let ra: EvalReport = serde_json::from_str(&read_text(a)?)?;
    let rb: EvalReport = serde_json::from_str(&read_text(b)?)?;
    let delta = compare_runs(&ra, &rb)?;
    let json = to_json(&delta)?;
    match out {
        Some(path) => write_bytes(path, json.as_bytes()),
        None => io::stdout()
            .write_all(json.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn run(command: &Command) -> nnrank::Result<()> {
    match command {
        Command::BuildPool { manifest, out } => cmd_build_pool(manifest, out),
        Command::Rank {
            io,
            opts,
            hitlog,
            out,
        } => cmd_rank(io, opts, hitlog.as_deref(), out),
        Command::Evaluate {
            rankings,
            eval,
            out,
        } => cmd_evaluate(rankings, eval, out),
        Command::Ablate {
            io,
            opts,
            eval,
            sizes,
            seeds,
            out,
        } => cmd_ablate(io, opts, eval, sizes.as_deref(), seeds.as_deref(), out),
        Command::Diversity {
            hitlog,
            tokens,
            out,
        } => cmd_diversity(hitlog, tokens, out),
        Command::Compare { a, b, out } => cmd_compare(a, b, out.as_deref()),
    }
}

fn error_line(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{line}");
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let matches = match Cli::command()
        .long_version(&*Box::leak(long_version().into_boxed_str()))
        .try_get_matches()
    {
        Ok(m) => m,
        Err(e) => return usage_error(e),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return usage_error(e),
    };
    let threads = cli.threads.unwrap_or(0);

    if cli.config_dump {
        match to_json(&defaults(threads)) {
            Ok(s) => print!("{s}"),
            Err(e) => {
                error_line(e.kind(), &e.to_string());
                return ExitCode::from(EXIT_DATA);
            }
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        let _ = Cli::command().print_help();
        error_line("usage", "no subcommand given");
        return ExitCode::from(EXIT_USAGE);
    };

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            error_line("config", &format!("cannot start {threads} threads: {e}"));
            return ExitCode::from(EXIT_DATA);
        }
    };
    match pool.install(|| run(&command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn usage_error(e: clap::Error) -> ExitCode {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            ExitCode::SUCCESS
        }
        _ => {
            let _ = e.print();
            let msg = e.render().to_string();
            error_line("usage", msg.lines().next().unwrap_or("usage error"));
            ExitCode::from(EXIT_USAGE)
        }
    }
}
