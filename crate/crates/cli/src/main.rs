//! `fairshare`: tradeoff curves, ensemble comparisons and sampler traces.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 configuration error,
//! 3 computation or output-validation failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Overrides};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "fairshare",
    version,
    about = "Sum-rate/fairness tradeoffs for ZFDPC broadcast channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep, envelope, proportional-fair and selected point for one channel draw.
    Tradeoff(Common),
    /// Ensemble averages of every criterion plus the rate-split bound.
    Compare(Common),
    /// Draws of the randomized allocation with running averages.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Number of sampled allocations.
        #[arg(long)]
        draws: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory of the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of cake-cut grid points.
    #[arg(long)]
    grid: Option<usize>,
    /// Number of channel blocks per ensemble.
    #[arg(long)]
    blocks: Option<usize>,
    /// Transmit power(s) in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    power_db: Option<Vec<f64>>,
    /// Criteria, comma separated: max_sum, pf, hm, max_min, tristage.
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<String>>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    antennas: Option<usize>,
}

impl Common {
    fn load(self, draws: Option<usize>) -> Result<ExperimentConfig, CliError> {
        let overrides = Overrides {
            users: self.users,
            antennas: self.antennas,
            power_db: self.power_db,
            criteria: self.criteria,
            n_blocks: self.blocks,
            c_grid: self.grid,
            seed: self.seed,
            output_dir: self.out,
            draws,
        };
        ExperimentConfig::load(self.config.as_deref(), overrides)
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("FAIRSHARE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| {
            CliError::Config(format!(
                "FAIRSHARE_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    init_threads()?;
    match cli.command {
        Command::Tradeoff(common) => commands::tradeoff(&common.load(None)?),
        Command::Compare(common) => commands::compare(&common.load(None)?),
        Command::Sample { common, draws } => commands::sample(&common.load(draws)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fairshare: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
