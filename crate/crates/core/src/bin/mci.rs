use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mci_core::harness::{persist, run, Experiment, ExperimentConfig};
use mci_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mci", version, about = "Minimum-complexity random-features interpolation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve and evaluate each configured (p, N, seed) cell.
    Solve(Common),
    /// Test error against width for several penalties.
    Fig1(Common),
    /// Distance to the infinite-width reference against width, with log-log slopes.
    Scaling(Common),
    /// Scaling study for identity features with noise.
    Latent(Common),
    /// Hermite, small-ball, moment and event-budget diagnostics.
    Audit(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; fields left out take the experiment's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_path`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// First seed; the seed list becomes `seed, seed + 1, ...` with its length kept.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override a config field, e.g. `--set solver.max_iter=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn execute(exp: Experiment, c: Common) -> Result<bool> {
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let file = match &c.config {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let mut cfg = ExperimentConfig::resolve(exp, file, &c.sets, c.seed)?;
    if let Some(o) = &c.out {
        cfg.output_path = o.to_string_lossy().into_owned();
    }
    let result = run(&cfg)?;
    let dir = PathBuf::from(&cfg.output_path);
    persist(&result, &dir)?;
    for f in &result.failures {
        eprintln!("row p={} N={} seed={}: {}", f.p, f.n_features, f.seed, f.message);
    }
    eprintln!("wrote {} rows to {}", result.rows.len(), dir.display());
    Ok(!result.has_row_failures())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (exp, common) = match cli.cmd {
        Cmd::Solve(c) => (Experiment::Solve, c),
        Cmd::Fig1(c) => (Experiment::Fig1, c),
        Cmd::Scaling(c) => (Experiment::Scaling, c),
        Cmd::Latent(c) => (Experiment::Latent, c),
        Cmd::Audit(c) => (Experiment::Audit, c),
    };
    match execute(exp, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
