use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "arbitrage", version, about = "Battery arbitrage: train, distil, verify and backtest")]
pub struct Cli {
    /// Run configuration (TOML, or JSON by extension). Required except for synth-prices.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Print the full default configuration as TOML and exit.
    #[arg(long)]
    pub print_default_config: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentArg {
    Dqn,
    Ddqn,
}

/// Which calendar days of the price file an evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum DaysArg {
    All,
    Train,
    Validation,
    #[default]
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a price CSV, write it back normalised, and write histogram.csv.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic minute prices.
    SynthPrices {
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured number of days.
        #[arg(long)]
        days: Option<i64>,
    },
    /// Train a DQN or distributional DQN agent; writes a checkpoint and curve.csv.
    Train {
        #[arg(long, value_enum)]
        agent: AgentArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prices: Option<PathBuf>,
    },
    /// Distil a trained agent into a small student through the correction layer.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prices: Option<PathBuf>,
    },
    /// Check the properties on a state grid; exits 0 only when the checked
    /// policy (the student with its layer, or an agent) has no violations.
    Verify {
        #[arg(long, conflicts_with = "controllers")]
        student: Option<PathBuf>,
        /// A single controller to check instead of a student.
        #[arg(long)]
        controllers: Option<String>,
        /// Grid file (TOML or JSON); defaults to the configured probe grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Per-day profits of each controller.
    Backtest {
        #[arg(long)]
        controllers: String,
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        days: DaysArg,
        /// Output directory; defaults to the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy action maps over (price, soc) per calendar context.
    Heatmap {
        #[arg(long)]
        controllers: String,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Profit comparison table of two or more controllers.
    Compare {
        #[arg(long)]
        controllers: String,
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        days: DaysArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Step-by-step trace of one controller on one day.
    Trace {
        #[arg(long)]
        controllers: String,
        #[arg(long)]
        day: NaiveDate,
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}
