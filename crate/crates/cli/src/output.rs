use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedsim_core::data::csv_io::fmt_f64;
use fedsim_core::fl::{RoundReport, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    /// The only field that differs between repeated runs.
    pub wall_clock_seconds: f64,
}

/// Displayed precision for summary tables.
pub fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One row per round and strategy with a weight column per client; clients
/// not selected that round leave the cell empty.
pub fn write_rounds_csv<W: Write>(writer: W, num_clients: usize, runs: &[(Strategy, Vec<RoundReport>)]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["t", "strategy", "macro_f1", "comm_seconds", "params_trained"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..num_clients).map(|k| format!("w_{k}")));
    w.write_record(&header)?;
    for (strategy, reports) in runs {
        for r in reports {
            let mut weights = vec![String::new(); num_clients];
            for (&k, &wk) in r.selected.iter().zip(&r.weights) {
                weights[k] = fmt_f64(wk);
            }
            let mut row = vec![
                r.round.to_string(),
                strategy.name().to_string(),
                fmt_f64(r.macro_f1()),
                fmt_f64(r.comm_seconds),
                r.params_trained.to_string(),
            ];
            row.extend(weights);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// Exact final-round value from rounds.csv.
    pub final_macro_f1: f64,
    pub final_macro_f1_display: f64,
    /// FLISM minus this strategy, when FLISM ran alongside it.
    pub delta_f1_display: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub incomplete_ratio: f64,
    pub results: Vec<StrategyResult>,
}

impl SeedSummary {
    pub fn new(seed: u64, incomplete_ratio: f64, runs: &[(Strategy, Vec<RoundReport>)]) -> Self {
        let finals: Vec<(Strategy, f64)> = runs
            .iter()
            .map(|(s, r)| (*s, r.last().map_or(0.0, RoundReport::macro_f1)))
            .collect();
        Self {
            seed,
            incomplete_ratio,
            results: results_with_delta(&finals),
        }
    }
}

fn results_with_delta(finals: &[(Strategy, f64)]) -> Vec<StrategyResult> {
    let flism = finals.iter().find(|(s, _)| *s == Strategy::Flism).map(|&(_, f)| f);
    finals
        .iter()
        .map(|&(strategy, f)| StrategyResult {
            strategy,
            final_macro_f1: f,
            final_macro_f1_display: round3(f),
            delta_f1_display: flism.filter(|_| strategy != Strategy::Flism).map(|g| round3(g - f)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedSummary {
    pub seeds: Vec<u64>,
    pub incomplete_ratio: f64,
    /// Seed means of the final-round values.
    pub averaged: Vec<StrategyResult>,
}

impl AveragedSummary {
    pub fn new(incomplete_ratio: f64, per_seed: &[SeedSummary]) -> Self {
        let strategies: Vec<Strategy> = per_seed[0].results.iter().map(|r| r.strategy).collect();
        let finals: Vec<(Strategy, f64)> = strategies
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let vals: Vec<f64> = per_seed.iter().map(|p| p.results[i].final_macro_f1).collect();
                (s, mean(&vals))
            })
            .collect();
        Self {
            seeds: per_seed.iter().map(|p| p.seed).collect(),
            incomplete_ratio,
            averaged: results_with_delta(&finals),
        }
    }
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

pub fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}
