//! Driver binary: run programs, dump relations, emit metrics, generate
//! benchmark instances, and compare engine configurations.
//!
//! Exit codes: 0 success, 1 user error (bad input, parse/stratification/
//! oracle failures), 2 internal error (engine disagreement or a bug).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eagerlog::driver::{prepare, EngineKind, FactSet, Prepared, RunConfig};
use eagerlog::externs::{BackendKind, CachePolicy, FunctorRegistry, OracleConfig};
use eagerlog::ir::PredKind;
use eagerlog::metrics::{emit_csv, emit_csv_many, RunMetrics};
use eagerlog::treegen::{tree_reach, TreeGenConfig};

#[derive(Parser)]
#[command(name = "eagerlog", version, about = "Bottom-up Datalog engine with naive, semi-naive, and eager evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a program and dump its output relations.
    Run(RunArgs),
    /// Generate a benchmark instance (program + fact files).
    BenchGen(BenchGenArgs),
    /// Run several engine/thread configurations, check they agree, and
    /// collect their metrics in one CSV.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Naive,
    Seminaive,
    Eager,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Naive => EngineKind::Naive,
            EngineArg::Seminaive => EngineKind::Seminaive,
            EngineArg::Eager => EngineKind::Eager,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Mock,
    Smtlib,
}

#[derive(Clone, Copy, ValueEnum)]
enum CachePolicyArg {
    Replace,
    Union,
}

#[derive(Args, Clone)]
struct OracleOpts {
    /// Oracle backend for @is_sat.
    #[arg(long, value_enum, default_value = "mock")]
    oracle: OracleArg,
    /// Solver command line for --oracle smtlib, e.g. "z3 -in".
    #[arg(long, default_value = "z3 -in")]
    smt_solver: String,
    /// Artificial microseconds of latency per conjunct cache miss.
    #[arg(long, default_value_t = 0)]
    oracle_latency_us: u64,
    /// Conjunct cache policy.
    #[arg(long, value_enum, default_value = "replace")]
    cache_policy: CachePolicyArg,
}

impl OracleOpts {
    fn config(&self) -> OracleConfig {
        OracleConfig {
            backend: match self.oracle {
                OracleArg::Mock => BackendKind::Mock,
                OracleArg::Smtlib => BackendKind::Smtlib(self.smt_solver.clone()),
            },
            cache_policy: match self.cache_policy {
                CachePolicyArg::Replace => CachePolicy::Replace,
                CachePolicyArg::Union => CachePolicy::Union,
            },
            latency_us: self.oracle_latency_us,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Program file (.dl).
    program: PathBuf,
    /// Directory holding <pred>.facts files for input predicates.
    #[arg(long)]
    facts: PathBuf,
    /// Directory to write <pred>.csv dumps of output relations.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "seminaive")]
    engine: EngineArg,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Rotate δ atoms to the front of semi-naive rule bodies.
    #[arg(long)]
    delta_first: bool,
    /// Write run metrics to this CSV path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Seed for the eager engine's victim selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    oracle: OracleOpts,
}

#[derive(Args)]
struct BenchGenArgs {
    /// Instance family.
    #[arg(long, default_value = "tree-reach")]
    kind: String,
    #[arg(long)]
    depth: u32,
    #[arg(long, default_value_t = 2)]
    branching: u32,
    /// Fraction of non-root edges labeled with the complement of an
    /// ancestor literal.
    #[arg(long, default_value_t = 0.0)]
    contradiction_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; writes program.dl and edge.facts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    program: PathBuf,
    #[arg(long)]
    facts: PathBuf,
    /// Comma-separated engines to run.
    #[arg(long, value_delimiter = ',', default_value = "seminaive,eager")]
    engines: Vec<EngineArg>,
    /// Comma-separated thread counts.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long)]
    delta_first: bool,
    /// Metrics CSV collecting one row per run.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    oracle: OracleOpts,
}

/// Distinguishes "you gave me a bad program" from "the engines disagree".
enum CliError {
    User(String),
    Internal(String),
}

fn load(program: &Path, facts_dir: &Path) -> Result<(Prepared, FactSet), CliError> {
    let text = std::fs::read_to_string(program)
        .map_err(|e| CliError::User(format!("cannot read {}: {e}", program.display())))?;
    let registry = Arc::new(FunctorRegistry::with_builtins());
    let prepared = prepare(&text, &program.display().to_string(), registry)
        .map_err(|e| CliError::User(e.to_string()))?;
    let facts = prepared
        .load_facts_dir(facts_dir)
        .map_err(|e| CliError::User(e.to_string()))?;
    Ok((prepared, facts))
}

fn write_outputs(prepared: &Prepared, out: &eagerlog::driver::ExecResult, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::User(format!("cannot create {}: {e}", dir.display())))?;
    for name in prepared.program.decl_order() {
        if prepared.program.declarations[name].kind == PredKind::Output {
            let path = dir.join(format!("{name}.csv"));
            std::fs::write(&path, out.dump(name))
                .map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let (prepared, facts) = load(&args.program, &args.facts)?;
    let config = RunConfig {
        engine: args.engine.into(),
        threads: args.threads,
        delta_first: args.delta_first,
        oracle: args.oracle.config(),
        seed: args.seed,
        record_trace: false,
    };
    let out = prepared
        .run(&facts, &config)
        .map_err(|e| CliError::User(e.to_string()))?;
    write_outputs(&prepared, &out, &args.out)?;
    if let Some(path) = &args.metrics {
        emit_csv(&out.metrics, path)
            .map_err(|e| CliError::User(format!("cannot write metrics: {e}")))?;
    }
    Ok(())
}

fn cmd_bench_gen(args: &BenchGenArgs) -> Result<(), CliError> {
    if args.kind != "tree-reach" {
        return Err(CliError::User(format!(
            "unknown benchmark kind `{}` (expected tree-reach)",
            args.kind
        )));
    }
    if args.depth < 1 {
        return Err(CliError::User("depth must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&args.contradiction_rate) {
        return Err(CliError::User("contradiction rate must be within [0, 1]".into()));
    }
    let inst = tree_reach(&TreeGenConfig {
        depth: args.depth,
        branching: args.branching,
        contradiction_rate: args.contradiction_rate,
        seed: args.seed,
    });
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::User(format!("cannot create {}: {e}", args.out.display())))?;
    std::fs::write(args.out.join("program.dl"), &inst.program)
        .map_err(|e| CliError::User(e.to_string()))?;
    std::fs::write(args.out.join("edge.facts"), &inst.edge_facts)
        .map_err(|e| CliError::User(e.to_string()))?;
    println!(
        "wrote tree-reach instance: {} nodes, {} edges -> {}",
        inst.node_count,
        inst.labels.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let (prepared, facts) = load(&args.program, &args.facts)?;
    let mut rows: Vec<RunMetrics> = Vec::new();
    let mut reference: Option<(String, String)> = None;
    for engine in &args.engines {
        for &threads in &args.threads {
            for rep in 0..args.repeats.max(1) {
                let config = RunConfig {
                    engine: (*engine).into(),
                    threads,
                    delta_first: args.delta_first,
                    oracle: args.oracle.config(),
                    seed: args.seed.wrapping_add(rep as u64),
                    record_trace: false,
                };
                let label = format!("{}/t{}/r{}", config.engine.name(), threads, rep);
                let out = prepared
                    .run(&facts, &config)
                    .map_err(|e| CliError::User(e.to_string()))?;
                let dump = out.dump_outputs(&prepared.program);
                match &reference {
                    None => reference = Some((label.clone(), dump)),
                    Some((ref_label, ref_dump)) => {
                        if *ref_dump != dump {
                            return Err(CliError::Internal(format!(
                                "output mismatch: {label} disagrees with {ref_label}"
                            )));
                        }
                    }
                }
                println!(
                    "{label}: wall={:.3}s work={} derived={} oracle_calls={} cache_misses={}",
                    out.metrics.wall_seconds,
                    out.metrics.work,
                    out.metrics.derived,
                    out.metrics.oracle_calls,
                    out.metrics.cache_misses
                );
                rows.push(out.metrics);
            }
        }
    }
    if let Some(path) = &args.metrics {
        emit_csv_many(&rows, path)
            .map_err(|e| CliError::User(format!("cannot write metrics: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::BenchGen(args) => cmd_bench_gen(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
