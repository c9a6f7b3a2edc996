use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use bforest_cli::commands::{self, SynthKind};
use bforest_cli::{RunConfig, Settings, EXIT_ERROR};
use clap::{Args, Parser, Subcommand, ValueEnum};
use toml::Value;

#[derive(Parser)]
#[command(
    name = "bforest",
    version,
    about = "Plan trips with a forest of behavior trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan every query and write one result per query.
    Plan(RunArgs),
    /// Score a directory of plan results.
    Evaluate {
        /// Directory holding the plan results.
        #[arg(long)]
        plans: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the batch in parallel and sequential mode and compare.
    Bench(RunArgs),
    /// Write a synthetic catalog, queries and mock rules.
    Synth {
        #[arg(long, value_enum, default_value = "feasible")]
        kind: SynthKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Parallel,
    Sequential,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
#[allow(clippy::enum_variant_names)]
enum Ablate {
    NoCoordination,
    NoRerank,
    NoHeuristic,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file of settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Query file or directory; may be repeated.
    #[arg(long)]
    queries: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    ablate: Vec<Ablate>,
    /// Queries planned concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    max_rounds: Option<u32>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// `mock` or `http`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    mock_rules: Option<PathBuf>,
    #[arg(long)]
    mock_latency_ms: Option<u64>,
    /// Any setting as key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn path_value(p: &std::path::Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

impl RunArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        if let Some(p) = &self.catalog {
            s.set("catalog", path_value(p));
        }
        if !self.queries.is_empty() {
            s.set(
                "queries",
                Value::Array(self.queries.iter().map(|p| path_value(p)).collect()),
            );
        }
        if let Some(p) = &self.out {
            s.set("out", path_value(p));
        }
        if let Some(p) = &self.prompts {
            s.set("prompts", path_value(p));
        }
        if let Some(m) = self.mode {
            let name = match m {
                Mode::Parallel => "parallel",
                Mode::Sequential => "sequential",
            };
            s.set("mode", Value::String(name.into()));
        }
        for a in &self.ablate {
            let name = match a {
                Ablate::NoCoordination => "no_coordination",
                Ablate::NoRerank => "no_rerank",
                Ablate::NoHeuristic => "no_heuristic",
            };
            s.set(&format!("ablation.{name}"), Value::Boolean(true));
        }
        if let Some(j) = self.jobs {
            s.set("jobs", Value::Integer(j as i64));
        }
        if let Some(r) = self.max_rounds {
            s.set("max_rounds", Value::Integer(i64::from(r)));
        }
        if let Some(k) = self.pool_size {
            s.set("pool_size", Value::Integer(k as i64));
        }
        if let Some(b) = &self.backend {
            s.set("backend", Value::String(b.clone()));
        }
        if let Some(p) = &self.mock_rules {
            s.set("mock.rules", path_value(p));
        }
        if let Some(ms) = self.mock_latency_ms {
            s.set("mock.latency_ms", Value::Integer(ms as i64));
        }
        for o in &self.overrides {
            s.set_assignment(o)?;
        }
        Ok(s)
    }

    fn config(&self) -> Result<RunConfig> {
        RunConfig::from_settings(&self.settings()?, true)
    }
}

fn with_config(args: &RunArgs, f: impl FnOnce(&RunConfig) -> i32) -> i32 {
    match args.config() {
        Ok(cfg) => f(&cfg),
        Err(e) => {
            log::error!("{e:#}");
            EXIT_ERROR
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Plan(args) => with_config(args, commands::cmd_plan),
        Command::Evaluate { plans, run } => {
            with_config(run, |cfg| commands::cmd_evaluate(cfg, plans))
        }
        Command::Bench(args) => with_config(args, commands::cmd_bench),
        Command::Synth {
            kind,
            seed,
            count,
            out,
        } => commands::cmd_synth(*kind, *seed, *count, out),
    };
    ExitCode::from(code as u8)
}
