//! `olpi`: command-line front end.
//!
//! Subcommands:
//! - `solve`   run vi / pi / online / rollout on an instance and write a run log
//! - `verify`  replay and check a run log against its instance
//! - `gen`     write a seeded random instance
//! - `compare` sweep seeds across all modes and emit a CSV table
//!
//! Exit codes: 0 success, 1 failed verification, 2 usage/parse/validation
//! error, 3 non-convergence within limits.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "olpi", version, about = "On-line policy iteration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    Vi,
    Pi,
    Online,
    Rollout,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Plain,
    Exploration,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Argmin,
    FirstImproving,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Jsonl,
}

#[derive(clap::Args, Debug)]
pub struct SolveArgs {
    /// Instance file, or `counterexample` for the built-in 3-state instance.
    #[arg(long)]
    instance: String,
    #[arg(long, value_enum)]
    algorithm: Algorithm,
    #[arg(long, value_enum, default_value = "plain")]
    mode: ModeArg,
    /// Initial state (1-based).
    #[arg(long, default_value_t = 1)]
    x0: usize,
    /// Initial policy: `mubar`, `mustar`, `first`, or comma-separated labels.
    #[arg(long, default_value = "first")]
    initial: String,
    /// Required for online and rollout.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    max_steps: usize,
    /// Defaults to 10 * n.
    #[arg(long)]
    stable_window: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "argmin")]
    rule: RuleArg,
    /// Value iteration tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Run-log output path.
    #[arg(long, default_value = "olpi-run.jsonl")]
    log: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    instance: String,
    #[arg(long)]
    log: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    max_actions: usize,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 0.0)]
    cost_min: f64,
    #[arg(long, default_value_t = 1.0)]
    cost_max: f64,
    #[arg(long, default_value_t = 0.9)]
    discount: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    instance: String,
    #[arg(long, default_value_t = 1)]
    x0: usize,
    #[arg(long, default_value = "first")]
    initial: String,
    /// Seeds as a comma list and/or inclusive ranges, e.g. `1..20` or `3,5,8`.
    #[arg(long)]
    seeds: String,
    #[arg(long, default_value_t = 1000)]
    max_steps: usize,
    #[arg(long)]
    stable_window: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "argmin")]
    rule: RuleArg,
    #[arg(long, value_enum, default_value = "csv")]
    format: TableFormat,
    /// Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an algorithm and write a run log.
    Solve(SolveArgs),
    /// Replay and verify a run log.
    Verify(VerifyArgs),
    /// Generate a seeded random instance.
    Gen(GenArgs),
    /// Compare all on-line modes and classical PI across seeds.
    Compare(CompareArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Gen(a) => commands::gen(&a),
        Command::Compare(a) => commands::compare(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
