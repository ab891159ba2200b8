//! `teamopt`: runs simulations, certification checks and person-by-person
//! optimization of decentralized stochastic control problems from a config
//! file. Exit status 0 means the subcommand's check passed, 1 that it
//! failed, 2 an error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use teamopt::config::{apply_override, read_tree, set_path, ExperimentConfig};
use teamopt::error::CliError;
use teamopt::io::{self, OutputDir, RunManifest};
use teamopt::{commands, problem};

#[derive(Parser)]
#[command(
    name = "teamopt",
    version,
    about = "Decentralized stochastic team control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path bundle under the reference or original measure.
    Simulate(RunArgs),
    /// Check that the likelihood ratio has mean one at the checkpoints.
    CheckMartingale(RunArgs),
    /// Compare the static reformulation of a discrete team with direct simulation.
    StaticCompare(RunArgs),
    /// Solve the adjoint equation along controlled paths.
    SolveBsde(RunArgs),
    /// Person-by-person optimization with residual certification.
    Optimize(RunArgs),
    /// Estimate each agent's value process.
    Value(RunArgs),
    /// Print the built-in benchmark catalog.
    ListBenchmarks {
        /// Also write `benchmarks.json` into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML, JSON, or a previous run's manifest.json).
    #[arg(long, visible_alias = "spec")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the `[info]` block with the one in this file.
    #[arg(long)]
    info: Option<PathBuf>,
    /// JSON file with initial policy parameters, one array per agent.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_cycles: Option<usize>,
    /// `key=value` with a dotted key, e.g. `run.steps=100`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TEAMOPT_THREADS") else {
        return Ok(());
    };
    let threads: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => {
            return Err(CliError::invalid(
                Path::new("TEAMOPT_THREADS"),
                format!("expected a positive integer, got `{raw}`"),
            ))
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::io("configuring worker threads", std::io::Error::other(e)))
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let source = &args.config;
    let mut tree = read_tree(source)?;
    if let Some(info) = &args.info {
        let mut block = read_tree(info)?;
        if let Value::Object(m) = &mut block {
            if let Some(inner) = m.remove("info") {
                block = inner;
            }
        }
        set_path(&mut tree, "info", block, source)?;
    }
    if let Some(init) = &args.init {
        let text = std::fs::read_to_string(init)
            .map_err(|e| CliError::invalid(init, format!("cannot read: {e}")))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::invalid(init, e.to_string()))?;
        if let Value::Object(m) = &mut value {
            // accept the `policy.json` written by `optimize`
            if let Some(Value::Array(agents)) = m.remove("agents") {
                value = Value::Array(
                    agents
                        .into_iter()
                        .map(|a| a.get("params").cloned().unwrap_or(a))
                        .collect(),
                );
            }
        }
        set_path(&mut tree, "run.init", value, source)?;
    }
    let flags: [(&str, Option<Value>); 5] = [
        ("run.seed", args.seed.map(Value::from)),
        ("run.paths", args.paths.map(Value::from)),
        ("run.tol", args.tol.map(Value::from)),
        ("run.max_cycles", args.max_cycles.map(Value::from)),
        (
            "output.dir",
            args.out
                .as_ref()
                .map(|p| Value::from(p.to_string_lossy().into_owned())),
        ),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            set_path(&mut tree, key, v, source)?;
        }
    }
    for o in &args.overrides {
        apply_override(&mut tree, o, source)?;
    }
    ExperimentConfig::from_tree(tree, source)
}

fn run(name: &str, args: &RunArgs) -> Result<bool, CliError> {
    let start = Instant::now();
    let cfg = load(args)?;
    let problem = problem::build(&cfg, &args.config)?;
    let mut out = OutputDir::create(&problem.resolved.output.dir)?;
    out.write_json("resolved_config.json", &problem.resolved)?;
    let outcome = match name {
        "simulate" => commands::simulate(&problem, &mut out)?,
        "check-martingale" => commands::check_martingale(&problem, &mut out)?,
        "static-compare" => commands::static_compare(&problem, &mut out)?,
        "solve-bsde" => commands::solve_bsde_cmd(&problem, &mut out)?,
        "optimize" => commands::optimize(&problem, &mut out)?,
        "value" => commands::value(&problem, &mut out)?,
        _ => unreachable!("subcommand names are fixed"),
    };
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: name.to_string(),
        resolved_config: serde_json::to_value(&problem.resolved).expect("config serializes"),
        seeds: outcome.seeds,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        exit_status: if outcome.pass { 0 } else { 1 },
        files: out.inventory()?,
    };
    io::write_manifest(&mut out, &manifest)?;
    println!(
        "{name}: {} ({} files in {})",
        if outcome.pass { "pass" } else { "check failed" },
        manifest.files.len() + 1,
        out.path().display()
    );
    Ok(outcome.pass)
}

fn list_benchmarks(out: Option<&Path>) -> Result<bool, CliError> {
    for b in teamopt_core::benchmarks::list_benchmarks() {
        println!("{:<20} oracle: {:<22} {}", b.name, b.oracle, b.description);
    }
    if let Some(dir) = out {
        let mut o = OutputDir::create(dir)?;
        o.write_json("benchmarks.json", &commands::list_benchmarks_json())?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate(a) => run("simulate", a),
        Command::CheckMartingale(a) => run("check-martingale", a),
        Command::StaticCompare(a) => run("static-compare", a),
        Command::SolveBsde(a) => run("solve-bsde", a),
        Command::Optimize(a) => run("optimize", a),
        Command::Value(a) => run("value", a),
        Command::ListBenchmarks { out } => list_benchmarks(out.as_deref()),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
