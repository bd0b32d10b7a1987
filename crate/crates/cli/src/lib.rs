//! Experiment configuration, subcommands and result files for the `sim`
//! binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedsim_core::fl::Strategy;

pub use commands::{cmd_ablate, cmd_diagnose, cmd_run, cmd_sweep, SweepAxis};
pub use config::{ExperimentConfig, SweepAxes};
pub use error::{CliError, CliResult};
pub use output::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "sim", version, about = "Federated learning simulation with incomplete multimodal data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train each strategy per seed and write rounds.csv, summary.json, manifest.json.
    Run(Common),
    /// One run per axis value, consolidated into sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "p_inc")]
        axis: AxisArg,
    },
    /// Entropy, macro-F1 and embedding-distance curves against missing modalities.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Only write the entropy curve.
        #[arg(long)]
        skip_mirl_pair: bool,
    },
    /// The four-row component table per seed.
    Ablate(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    #[value(name = "p_inc")]
    PInc,
    #[value(name = "M", alias = "m")]
    M,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the configured strategies; repeat for head-to-head runs.
    #[arg(long = "strategy", value_parser = parse_strategy)]
    pub strategies: Vec<Strategy>,
    /// Replaces the configured seeds.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
        format!("unknown strategy `{s}`, expected one of {}", names.join(", "))
    })
}

impl Common {
    pub fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if !self.strategies.is_empty() {
            cfg.strategies = self.strategies.clone();
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Caps the global worker pool from `SIM_THREADS`.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::field("SIM_THREADS", format!("`{value}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Run(c) => cmd_run(&c.load()?),
        Command::Sweep { common, axis } => {
            let axis = match axis {
                AxisArg::PInc => SweepAxis::PInc,
                AxisArg::M => SweepAxis::M,
            };
            cmd_sweep(&common.load()?, axis)
        }
        Command::Diagnose { common, skip_mirl_pair } => cmd_diagnose(&common.load()?, *skip_mirl_pair),
        Command::Ablate(c) => cmd_ablate(&c.load()?),
    }
}
