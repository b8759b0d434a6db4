use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "robust-impulse", version, about = "Robust impulse control on scenario lattices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Instance file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Fixed intervention budget; the adaptive solver is used when absent.
    #[arg(long, global = true)]
    pub k: Option<usize>,

    /// Tolerance of the adaptive solver.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub tol: f64,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Monte Carlo paths.
    #[arg(long, global = true, default_value_t = 10_000)]
    pub paths: usize,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Value field CSV to verify instead of solving.
    #[arg(long, global = true)]
    pub field: Option<PathBuf>,

    /// Run on this many seeded random instances instead of the config.
    #[arg(long, global = true)]
    pub random: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Validate, solve, and write the value field with a summary.
    Solve,
    /// Oracle checks: game value, saddle point, uniqueness, tower property.
    Verify,
    /// Write the optimal control and worst-case strategy tables.
    Extract,
    /// Compile the SDE game, solve it and cross-check by Monte Carlo.
    Sdg,
    /// Snell recursion against the brute-force stopping game.
    StoppingCheck,
    /// Tower property over every pair of levels.
    TowerCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::run(&cli)),
            Err(e) => Err(commands::Failure::Invalid(format!("thread pool: {e}"))),
        },
        None => commands::run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
