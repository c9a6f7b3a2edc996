//! The `plan`, `evaluate`, `bench` and `synth` commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use bforest_core::catalog::{load_catalog, Catalog};
use bforest_core::config::{ExecutionMode, PlannerConfig};
use bforest_core::domain::Query;
use bforest_core::evaluation::{evaluate_result, report, violations_csv, MetricsReport, Rate};
use bforest_core::llm::{CompletionBackend, TokenUsage};
use bforest_core::pipeline::{plan, PlanResult};
use bforest_core::prompts::Prompts;
use bforest_core::synth::{self, SynthBatch};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Reads one query or an array of queries from a JSON file.
fn read_query_file(path: &Path) -> Result<Vec<Query>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let queries = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|q| vec![q])
    };
    queries.with_context(|| format!("{} does not hold queries", path.display()))
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads queries from files and directories, in path order.
pub fn load_queries(paths: &[PathBuf]) -> Result<Vec<Query>> {
    let mut queries = Vec::new();
    for path in paths {
        if path.is_dir() {
            for file in json_files(path)? {
                queries.extend(read_query_file(&file)?);
            }
        } else {
            queries.extend(read_query_file(path)?);
        }
    }
    let mut ids: Vec<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("duplicate query id `{}`", w[0]);
    }
    Ok(queries)
}

/// Runs `f` over `items` on at most `jobs` threads, keeping input order.
pub fn run_pool<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new(items.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

/// Inputs shared by every query of a run.
pub struct Workload {
    pub catalog: Catalog,
    pub queries: Vec<Query>,
    pub prompts: Prompts,
}

impl Workload {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let catalog = load_catalog(&config.catalog)?;
        let queries = load_queries(&config.queries)?;
        let prompts = match &config.prompts {
            Some(dir) => Prompts::from_dir(dir)
                .with_context(|| format!("reading prompts in {}", dir.display()))?,
            None => Prompts::default(),
        };
        Ok(Workload {
            catalog,
            queries,
            prompts,
        })
    }

    pub fn plan_all(
        &self,
        backend: &dyn CompletionBackend,
        planner: &PlannerConfig,
        jobs: usize,
    ) -> Vec<PlanResult> {
        run_pool(&self.queries, jobs, |q| {
            let r = plan(q, &self.catalog, backend, &self.prompts, planner);
            match r.failure() {
                None => info!("{}: delivered in {} round(s)", r.query_id, r.rounds_used),
                Some(reason) => info!("{}: failed ({reason:?})", r.query_id),
            }
            r
        })
    }

    /// Checks every result against its query and summarises the batch.
    pub fn evaluate(
        &self,
        results: &[PlanResult],
    ) -> Result<(
        MetricsReport,
        Vec<Vec<bforest_core::evaluation::ConstraintCheck>>,
    )> {
        let mut checks = Vec::with_capacity(results.len());
        for r in results {
            let q = self
                .queries
                .iter()
                .find(|q| q.id == r.query_id)
                .ok_or_else(|| anyhow!("no query with id `{}`", r.query_id))?;
            checks.push(evaluate_result(r, &self.catalog, q));
        }
        Ok((report(results, &checks), checks))
    }
}

/// Writes one `<query_id>.json` per result and a `trace.jsonl` holding
/// every coordination round.
pub fn write_results(out: &Path, results: &[PlanResult]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut trace = fs::File::create(out.join("trace.jsonl"))?;
    for r in results {
        fs::write(
            out.join(format!("{}.json", r.query_id)),
            serde_json::to_string_pretty(r)?,
        )?;
        for round in &r.violation_trace {
            let line = json!({"query_id": r.query_id, "record": round});
            writeln!(trace, "{line}")?;
        }
    }
    Ok(())
}

fn exit_code(result: Result<i32>) -> i32 {
    result.unwrap_or_else(|e| {
        log::error!("{e:#}");
        EXIT_ERROR
    })
}

/// Plans every query and writes the results. Exit 0 when all deliver,
/// 1 when any fails, 2 on configuration or IO errors.
pub fn cmd_plan(config: &RunConfig) -> i32 {
    exit_code(run_plan(config).map(|results| {
        if results.iter().all(PlanResult::is_delivered) {
            EXIT_OK
        } else {
            EXIT_FAILED
        }
    }))
}

pub fn run_plan(config: &RunConfig) -> Result<Vec<PlanResult>> {
    let work = Workload::load(config)?;
    let backend = config.backend.build()?;
    let results = work.plan_all(&backend, &config.planner, config.jobs);
    write_results(&config.out, &results)?;
    let delivered = results.iter().filter(|r| r.is_delivered()).count();
    info!(
        "{delivered}/{} plans delivered, written to {}",
        results.len(),
        config.out.display()
    );
    Ok(results)
}

/// Reads every plan result in `dir`, skipping the reports this command
/// writes itself.
pub fn load_results(dir: &Path) -> Result<Vec<PlanResult>> {
    let mut results = Vec::new();
    for file in json_files(dir)? {
        if file
            .file_name()
            .is_some_and(|n| n == "report.json" || n == "bench.json")
        {
            continue;
        }
        let text = fs::read_to_string(&file)?;
        results.push(
            serde_json::from_str(&text)
                .with_context(|| format!("{} is not a plan result", file.display()))?,
        );
    }
    Ok(results)
}

/// Scores the plans in `plans` and writes `report.json`, `report.txt` and
/// `violations.csv` to `config.out`.
pub fn cmd_evaluate(config: &RunConfig, plans: &Path) -> i32 {
    exit_code(run_evaluate(config, plans).map(|_| EXIT_OK))
}

pub fn run_evaluate(config: &RunConfig, plans: &Path) -> Result<MetricsReport> {
    let work = Workload::load(config)?;
    let results = load_results(plans)?;
    if results.is_empty() {
        warn!("no plan results found in {}", plans.display());
    }
    let (metrics, checks) = work.evaluate(&results)?;
    fs::create_dir_all(&config.out)?;
    fs::write(
        config.out.join("report.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    fs::write(config.out.join("report.txt"), metrics.to_table())?;
    fs::write(config.out.join("violations.csv"), violations_csv(&checks)?)?;
    print!("{}", metrics.to_table());
    Ok(metrics)
}

/// Outcome of one mode of a benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct ModeRun {
    pub mode: ExecutionMode,
    pub wall_time_ms: u64,
    pub token_usage: TokenUsage,
    pub delivery_rate: Rate,
    pub final_pass_rate: Rate,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub queries: usize,
    pub mock_latency_ms: u64,
    pub parallel: ModeRun,
    pub sequential: ModeRun,
    /// Parallel wall time over sequential wall time.
    pub ratio: f64,
    /// Query ids whose results differ between modes.
    pub mismatched: Vec<String>,
}

fn run_mode(
    work: &Workload,
    config: &RunConfig,
    mode: ExecutionMode,
) -> Result<(ModeRun, Vec<PlanResult>)> {
    let backend = config.backend.build()?;
    let planner = PlannerConfig {
        mode,
        ..config.planner.clone()
    };
    let started = Instant::now();
    let results = work.plan_all(&backend, &planner, config.jobs);
    let wall_time_ms = started.elapsed().as_millis() as u64;
    let (metrics, _) = work.evaluate(&results)?;
    let run = ModeRun {
        mode,
        wall_time_ms,
        token_usage: metrics.token_usage,
        delivery_rate: metrics.delivery_rate,
        final_pass_rate: metrics.final_pass_rate,
    };
    Ok((run, results))
}

/// Runs the batch in both execution modes and compares them. Exit 1 when
/// any plan differs between the modes.
pub fn cmd_bench(config: &RunConfig) -> i32 {
    exit_code(run_bench(config).map(|b| {
        if b.mismatched.is_empty() {
            EXIT_OK
        } else {
            EXIT_FAILED
        }
    }))
}

pub fn run_bench(config: &RunConfig) -> Result<BenchReport> {
    let work = Workload::load(config)?;
    let (parallel, par_results) = run_mode(&work, config, ExecutionMode::Parallel)?;
    let (sequential, seq_results) = run_mode(&work, config, ExecutionMode::Sequential)?;
    let mismatched = par_results
        .iter()
        .zip(&seq_results)
        .filter(|(a, b)| a.canonical_json() != b.canonical_json())
        .map(|(a, _)| a.query_id.clone())
        .collect();
    let ratio = parallel.wall_time_ms as f64 / (sequential.wall_time_ms.max(1)) as f64;
    let bench = BenchReport {
        queries: work.queries.len(),
        mock_latency_ms: config.backend.mock_latency_ms,
        parallel,
        sequential,
        ratio,
        mismatched,
    };
    fs::create_dir_all(&config.out)?;
    fs::write(
        config.out.join("bench.json"),
        serde_json::to_string_pretty(&bench)?,
    )?;
    println!(
        "parallel {} ms, sequential {} ms, ratio {:.3}, final pass {}% / {}%",
        bench.parallel.wall_time_ms,
        bench.sequential.wall_time_ms,
        bench.ratio,
        bench.parallel.final_pass_rate,
        bench.sequential.final_pass_rate
    );
    if !bench.mismatched.is_empty() {
        warn!("results differ between modes for {:?}", bench.mismatched);
    }
    Ok(bench)
}

/// Kinds of synthetic workload the `synth` command can write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    Feasible,
    Infeasible,
    Ablation,
    Small,
}

pub fn make_batch(kind: SynthKind, seed: u64, count: usize) -> SynthBatch {
    match kind {
        SynthKind::Feasible => synth::feasible_batch(seed, count),
        SynthKind::Infeasible => synth::infeasible_batch(seed, count),
        SynthKind::Ablation => synth::ablation_batch(seed, count),
        SynthKind::Small => synth::small_instance(seed),
    }
}

/// Writes a synthetic batch plus a `bforest.toml` that runs it.
pub fn cmd_synth(kind: SynthKind, seed: u64, count: usize, out: &Path) -> i32 {
    exit_code(write_synth(kind, seed, count, out).map(|_| EXIT_OK))
}

pub fn write_synth(kind: SynthKind, seed: u64, count: usize, out: &Path) -> Result<()> {
    let batch = make_batch(kind, seed, count);
    batch.write_to(out)?;
    let c = &batch.config;
    let toml = format!(
        "catalog = \"catalog.json\"\nqueries = \"queries\"\nout = \"plans\"\nmax_rounds = {}\npool_size = {}\n\n[mock]\nrules = \"mock-rules.json\"\nlatency_ms = 0\n",
        c.max_rounds, c.pool_size
    );
    fs::write(out.join("bforest.toml"), toml)?;
    info!("wrote {} queries to {}", batch.queries.len(), out.display());
    Ok(())
}
