use std::io::Write;
use std::path::Path;
use std::time::Instant;

use fedsim_core::cost::{scalability_sweep, write_sweep_csv};
use fedsim_core::data::csv_io::fmt_f64;
use fedsim_core::data::generate_population;
use fedsim_core::diagnostics::{
    ablation_suite, embedding_distance_curve, entropy_vs_missing, AblationRow, DiagnosticCurve,
};
use fedsim_core::fl::{run_federation, RoundReport, Strategy};
use fedsim_core::nn::ArchSpec;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{
    create_file, mean, relative, seed_dir, write_json, write_rounds_csv, AveragedSummary, RunManifest, SeedSummary,
    TOOL_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    PInc,
    M,
}

fn prepare_output(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::field("output_dir", format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".write_check");
    std::fs::write(&probe, b"").map_err(|e| CliError::field("output_dir", format!("not writable: {e}")))?;
    std::fs::remove_file(probe)?;
    Ok(())
}

fn manifest(command: &str, cfg: &ExperimentConfig, seed: Option<u64>, root: &Path, files: &[&Path], start: Instant) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config_hash: cfg.hash(),
        tool_version: TOOL_VERSION.to_string(),
        seed,
        files: files.iter().map(|f| relative(root, f)).collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    }
}

type StrategyRuns = Vec<(Strategy, Vec<RoundReport>)>;

/// Trains every configured strategy on one seed's population.
fn train_seed(cfg: &ExperimentConfig, arch: &ArchSpec, seed: u64, p_inc: f64) -> CliResult<(usize, StrategyRuns)> {
    let (mut pop_cfg, fl, _) = cfg.for_seed(seed);
    pop_cfg.incomplete_ratio = p_inc;
    let pop = generate_population(&pop_cfg)?;
    let runs = cfg
        .strategies
        .iter()
        .map(|&s| Ok((s, run_federation(&pop, &fl.with_strategy(s), arch)?)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((pop.clients.len(), runs))
}

/// Writes rounds.csv, summary.json and manifest.json under `dir`.
fn run_seed(cfg: &ExperimentConfig, arch: &ArchSpec, seed: u64, p_inc: f64, root: &Path, dir: &Path) -> CliResult<SeedSummary> {
    let start = Instant::now();
    let (k, runs) = train_seed(cfg, arch, seed, p_inc)?;
    let rounds = dir.join("rounds.csv");
    let mut w = create_file(&rounds)?;
    write_rounds_csv(&mut w, k, &runs)?;
    w.flush()?;
    let summary = SeedSummary::new(seed, p_inc, &runs);
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    let manifest_path = dir.join("manifest.json");
    let m = manifest("run", cfg, Some(seed), root, &[&rounds, &summary_path, &manifest_path], start);
    write_json(&manifest_path, &m)?;
    Ok(summary)
}

fn run_block(cfg: &ExperimentConfig, arch: &ArchSpec, p_inc: f64, root: &Path, block: &Path) -> CliResult<Vec<SeedSummary>> {
    cfg.seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, arch, seed, p_inc, root, &seed_dir(block, seed)))
        .collect()
}

fn seed_files(root: &Path, block: &Path, seeds: &[u64], names: &[&str]) -> Vec<String> {
    seeds
        .iter()
        .flat_map(|&s| names.iter().map(move |n| relative(root, &seed_dir(block, s).join(n))))
        .collect()
}

pub fn cmd_run(cfg: &ExperimentConfig) -> CliResult<()> {
    let start = Instant::now();
    let root = cfg.output_dir.as_path();
    prepare_output(root)?;
    let arch = cfg.build_arch()?;
    let p = cfg.population.incomplete_ratio;
    let per_seed = run_block(cfg, &arch, p, root, root)?;
    let summary_path = root.join("summary.json");
    write_json(&summary_path, &AveragedSummary::new(p, &per_seed))?;
    let mut m = manifest("run", cfg, None, root, &[&summary_path], start);
    m.files
        .extend(seed_files(root, root, &cfg.seeds, &["rounds.csv", "summary.json", "manifest.json"]));
    write_json(&root.join("manifest.json"), &m)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis) -> CliResult<()> {
    let start = Instant::now();
    let root = cfg.output_dir.as_path();
    let sweep_path = root.join("sweep.csv");
    let mut files = vec![relative(root, &sweep_path)];
    match axis {
        SweepAxis::M => {
            if cfg.cost.m_values.is_empty() {
                return Err(CliError::field("cost.m_values", "axis list must not be empty"));
            }
            prepare_output(root)?;
            let rows = scalability_sweep(&cfg.cost)?;
            let mut w = create_file(&sweep_path)?;
            write_sweep_csv(&mut w, &rows)?;
            w.flush()?;
        }
        SweepAxis::PInc => {
            if cfg.sweep.p_inc.is_empty() {
                return Err(CliError::field("sweep.p_inc", "axis list must not be empty"));
            }
            prepare_output(root)?;
            let arch = cfg.build_arch()?;
            let mut blocks = Vec::new();
            for &p in &cfg.sweep.p_inc {
                let block = root.join(format!("p_inc_{p}"));
                let per_seed = run_block(cfg, &arch, p, root, &block)?;
                files.extend(seed_files(root, &block, &cfg.seeds, &["rounds.csv", "summary.json", "manifest.json"]));
                blocks.push((p, per_seed));
            }
            write_p_inc_sweep(&sweep_path, cfg, &blocks)?;
            let summary_path = root.join("summary.json");
            let averaged: Vec<AveragedSummary> = blocks.iter().map(|(p, s)| AveragedSummary::new(*p, s)).collect();
            write_json(&summary_path, &averaged)?;
            files.push(relative(root, &summary_path));
        }
    }
    let mut m = manifest("sweep", cfg, None, root, &[], start);
    m.files = files;
    write_json(&root.join("manifest.json"), &m)
}

/// Per-seed rows, then seed means per block, then the mean over blocks.
fn write_p_inc_sweep(path: &Path, cfg: &ExperimentConfig, blocks: &[(f64, Vec<SeedSummary>)]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["p_inc", "seed", "strategy", "final_macro_f1"])?;
    for (p, per_seed) in blocks {
        for s in per_seed {
            for r in &s.results {
                w.write_record([p.to_string(), s.seed.to_string(), r.strategy.name().to_string(), fmt_f64(r.final_macro_f1)])?;
            }
        }
    }
    let mut block_means = vec![Vec::new(); cfg.strategies.len()];
    for (p, per_seed) in blocks {
        for (i, r) in AveragedSummary::new(*p, per_seed).averaged.iter().enumerate() {
            w.write_record([p.to_string(), "mean".into(), r.strategy.name().to_string(), fmt_f64(r.final_macro_f1)])?;
            block_means[i].push(r.final_macro_f1);
        }
    }
    for (s, vals) in cfg.strategies.iter().zip(&block_means) {
        w.write_record(["averaged".into(), "mean".into(), s.name().to_string(), fmt_f64(mean(vals))])?;
    }
    w.flush()?;
    Ok(())
}

fn write_curve(path: &Path, curve: &DiagnosticCurve) -> CliResult<()> {
    let mut w = create_file(path)?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_pair(path: &Path, with: &DiagnosticCurve, without: &DiagnosticCurve) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["d", "with_mirl", "without_mirl"])?;
    for i in 0..with.len() {
        w.write_record([with.d[i].to_string(), fmt_f64(with.embed_dist[i]), fmt_f64(without.embed_dist[i])])?;
    }
    w.flush()?;
    Ok(())
}

type SeedCurves = (DiagnosticCurve, Option<(DiagnosticCurve, DiagnosticCurve)>);

pub fn cmd_diagnose(cfg: &ExperimentConfig, skip_mirl_pair: bool) -> CliResult<()> {
    let start = Instant::now();
    let root = cfg.output_dir.as_path();
    prepare_output(root)?;
    let arch = cfg.build_arch()?;
    let strategy = cfg.strategies[0];
    let per_seed: Vec<SeedCurves> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (pop_cfg, fl, curve_cfg) = cfg.for_seed(seed);
            let pop = generate_population(&pop_cfg)?;
            let final_state = |fl: &fedsim_core::fl::FlConfig| -> CliResult<_> {
                let reports = run_federation(&pop, fl, &arch)?;
                Ok(reports.last().expect("at least one round").global_state.clone())
            };
            let model = final_state(&fl.with_strategy(strategy))?;
            let entropy = entropy_vs_missing(&arch, &model, &pop.test_set, &pop.layout, &curve_cfg)?;
            let dir = seed_dir(root, seed);
            write_curve(&dir.join("entropy_vs_missing.csv"), &entropy)?;
            let pair = if skip_mirl_pair {
                None
            } else {
                let with = final_state(&fl.flism_variant(true, false, false))?;
                let without = final_state(&fl.flism_variant(false, false, false))?;
                let (a, b) = embedding_distance_curve(&arch, &with, &without, &pop.test_set, &pop.layout, &curve_cfg)?;
                write_pair(&dir.join("embed_dist.csv"), &a, &b)?;
                Some((a, b))
            };
            Ok((entropy, pair))
        })
        .collect::<CliResult<_>>()?;

    let mut names = vec!["entropy_vs_missing.csv"];
    let entropy: Vec<DiagnosticCurve> = per_seed.iter().map(|(e, _)| e.clone()).collect();
    write_curve(&root.join("entropy_vs_missing.csv"), &DiagnosticCurve::mean(&entropy)?)?;
    if !skip_mirl_pair {
        names.push("embed_dist.csv");
        let (with, without): (Vec<_>, Vec<_>) = per_seed.into_iter().filter_map(|(_, p)| p).unzip();
        write_pair(&root.join("embed_dist.csv"), &DiagnosticCurve::mean(&with)?, &DiagnosticCurve::mean(&without)?)?;
    }
    let mut m = manifest("diagnose", cfg, None, root, &[], start);
    m.files = names.iter().map(|n| n.to_string()).collect();
    m.files.extend(seed_files(root, root, &cfg.seeds, &names));
    write_json(&root.join("manifest.json"), &m)
}

pub fn cmd_ablate(cfg: &ExperimentConfig) -> CliResult<()> {
    let start = Instant::now();
    let root = cfg.output_dir.as_path();
    prepare_output(root)?;
    let arch = cfg.build_arch()?;
    let per_seed: Vec<Vec<AblationRow>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (pop_cfg, fl, _) = cfg.for_seed(seed);
            let pop = generate_population(&pop_cfg)?;
            Ok(ablation_suite(&pop, &fl, &arch)?)
        })
        .collect::<CliResult<_>>()?;

    let path = root.join("ablation.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    w.write_record(["seed", "variant", "macro_f1"])?;
    for (seed, rows) in cfg.seeds.iter().zip(&per_seed) {
        for r in rows {
            w.write_record([seed.to_string(), r.variant.name().to_string(), fmt_f64(r.macro_f1)])?;
        }
    }
    if per_seed.len() > 1 {
        for (i, row) in per_seed[0].iter().enumerate() {
            let vals: Vec<f64> = per_seed.iter().map(|rows| rows[i].macro_f1).collect();
            w.write_record(["mean".to_string(), row.variant.name().to_string(), fmt_f64(mean(&vals))])?;
        }
    }
    w.flush()?;
    drop(w);
    let m = manifest("ablate", cfg, None, root, &[&path], start);
    write_json(&root.join("manifest.json"), &m)
}
