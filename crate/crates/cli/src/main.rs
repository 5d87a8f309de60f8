mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lqetc::Policy;

/// Exit status: 0 success, 2 invalid input, 3 failed acceptance check,
/// 4 numerical divergence, 1 anything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] lqetc::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Acceptance(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use lqetc::Error as E;
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Acceptance(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                E::NoConvergence { .. } | E::CostDiverges(_) | E::SingularCovariance => 4,
                E::Io(_) => 1,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lqetc", version, about = "Event-triggered LQG loops over a shared slotted channel")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration: a TOML file, a manifest (.json) or a preset name.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Master seed (default: the configured seed, then $LQETC_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; CSV tables also get a `<out>.manifest.json` sidecar.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Slots per run.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Comma-separated triggering probabilities.
    #[arg(long, global = true, value_delimiter = ',')]
    grid_p: Option<Vec<f64>>,
    /// Comma-separated channel availabilities.
    #[arg(long, global = true, value_delimiter = ',')]
    grid_q: Option<Vec<f64>>,
    /// Triggering policy for every loop: pst, stett or cett.
    #[arg(long, global = true)]
    policy: Option<Policy>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the steady-state gains of every loop.
    Gains,
    /// Validate the plants and test mean-square stability.
    Check,
    /// Closed-form PST cost over a (p, q) grid.
    Cost,
    /// Monte Carlo simulation, or a sweep when grids are given.
    Simulate,
    /// Utility-optimal triggering probabilities.
    Tune,
    /// Run the reference example end to end and check every criterion.
    ReproducePaper,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gains => commands::gains(&cli),
        Command::Check => commands::check(&cli),
        Command::Cost => commands::cost(&cli),
        Command::Simulate => commands::simulate(&cli),
        Command::Tune => commands::tune(&cli),
        Command::ReproducePaper => commands::reproduce(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
