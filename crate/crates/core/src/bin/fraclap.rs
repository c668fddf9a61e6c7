//! `fraclap <experiment> [--config FILE] [--set KEY=VALUE ...] --out DIR`
//!
//! Exit status: 0 when the run passes, 1 on a quantitative failure, 2 on a
//! configuration or output-directory problem.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fraclap::harness::{execute, load_config, ExperimentKind};
use fraclap::Error;

#[derive(Parser)]
#[command(
    name = "fraclap",
    version,
    about = "Long-jump random walks and the fractional Laplacian"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo walkers against the master equation
    Walk(RunArgs),
    /// Evolve the master equation to a time horizon
    Evolve(RunArgs),
    /// Symbol constant, homogeneity and rotation checks
    Symbol(RunArgs),
    /// Quadrature against spectral fractional Laplacian
    Operators(RunArgs),
    /// Lattice walk to fractional heat flow convergence study
    Converge(RunArgs),
    /// β-moment growth analysis
    Moments(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; omitted fields keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set alpha=1.5` or `--set symbol.inner_cutoff=1e-4`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Walk(a) => (ExperimentKind::Walk, a),
        Command::Evolve(a) => (ExperimentKind::Evolve, a),
        Command::Symbol(a) => (ExperimentKind::Symbol, a),
        Command::Operators(a) => (ExperimentKind::Operators, a),
        Command::Converge(a) => (ExperimentKind::Converge, a),
        Command::Moments(a) => (ExperimentKind::Moments, a),
    };
    let config = match load_config(args.config.as_deref(), &args.set, kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&config, &args.out) {
        Ok(outcome) => {
            println!("{}: {}", kind.name(), outcome.summary);
            println!("{}", if outcome.pass { "PASS" } else { "FAIL" });
            ExitCode::from(if outcome.pass { 0 } else { 1 })
        }
        Err(e @ (Error::Config(_) | Error::Io { .. } | Error::InvalidParameter { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
