//! Sweep orchestration and result aggregation. A sweep is a grid over
//! seeds, questioning strategies, and oracle noise rates; each cell runs in
//! its own directory with the resolved config and a JSONL epoch log, and
//! the report step folds those logs into a summary CSV (mean and standard
//! deviation over seeds).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, EpochRecord};
use crate::oracle::Strategy;
use crate::parallel::ordered_map;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub gammas: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            seeds: vec![0, 1, 2],
            strategies: vec![Strategy::NoOracle, Strategy::Soqal, Strategy::FullOracle],
            gammas: vec![0.0],
        }
    }
}

fn cell_name(seed: u64, strategy: Strategy, gamma: f64) -> String {
    format!("seed{seed}_{strategy}_gamma{gamma:.2}")
}

/// Expand the grid into fully resolved configs paired with cell directories.
pub fn expand(base: &ExperimentConfig, spec: &SweepSpec, out_dir: &Path) -> Vec<(PathBuf, ExperimentConfig)> {
    let mut cells = Vec::new();
    for &seed in &spec.seeds {
        for &strategy in &spec.strategies {
            for &gamma in &spec.gammas {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.oracle.strategy = strategy;
                cfg.oracle.gamma = gamma;
                cells.push((out_dir.join(cell_name(seed, strategy, gamma)), cfg));
            }
        }
    }
    cells
}

fn run_cell(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(dir.join("run.jsonl"))?);
    run_experiment(cfg, &mut log)?;
    log.flush()?;
    Ok(())
}

/// Run every cell of the grid; cells fan out in parallel (each owns its
/// directory, so they never contend). The first failure is reported.
pub fn run_sweep(base: &ExperimentConfig, spec: &SweepSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    base.validate()?;
    if spec.seeds.is_empty() || spec.strategies.is_empty() || spec.gammas.is_empty() {
        return Err(Error::Config("sweep grid must be non-empty in every axis".into()));
    }
    let cells = expand(base, spec, out_dir);
    for (_, cfg) in &cells {
        cfg.validate()?;
    }
    std::fs::create_dir_all(out_dir)?;
    let results: Vec<Result<()>> = ordered_map(&cells, |(dir, cfg)| run_cell(dir, cfg));
    for r in results {
        r?;
    }
    Ok(cells.into_iter().map(|(d, _)| d).collect())
}

/// Aggregation key: everything except the seed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    strategy: String,
    function: String,
    mode: String,
    noise: String,
    gamma_milli: i64,
}

#[derive(Debug, Clone, Default)]
struct CellStats {
    final_test_auc: Vec<f64>,
    mean_ask_rate: Vec<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn read_run(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            find_runs(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "run.jsonl") {
            out.push(p);
        }
    }
    Ok(())
}

/// Fold every `run.jsonl` under `dir` into a summary CSV: one line per
/// (strategy, function, mode, noise, gamma) cell, mean and std over seeds
/// of the final-epoch test AUROC and of the mean per-acquisition ask rate.
pub fn write_report(dir: &Path, w: &mut dyn Write) -> Result<()> {
    let mut runs = Vec::new();
    find_runs(dir, &mut runs)?;
    if runs.is_empty() {
        return Err(Error::Dataset(format!("no run.jsonl files under {}", dir.display())));
    }
    runs.sort();
    let mut cells: BTreeMap<CellKey, CellStats> = BTreeMap::new();
    for path in &runs {
        let records = read_run(path)?;
        let last = records
            .last()
            .ok_or_else(|| Error::Dataset(format!("{}: empty run log", path.display())))?;
        let key = CellKey {
            strategy: last.strategy.clone(),
            function: last.acquisition_function.clone(),
            mode: last.mode.clone(),
            noise: last.noise.clone(),
            gamma_milli: (last.gamma * 1000.0).round() as i64,
        };
        let stats = cells.entry(key).or_default();
        if let Some(auc) = last.test_auc {
            stats.final_test_auc.push(auc);
        }
        let asks: Vec<f64> = records.iter().filter_map(|r| r.ask_rate).collect();
        if !asks.is_empty() {
            stats.mean_ask_rate.push(asks.iter().sum::<f64>() / asks.len() as f64);
        }
    }
    writeln!(
        w,
        "strategy,function,mode,noise,gamma,runs,test_auc_mean,test_auc_std,ask_rate_mean,ask_rate_std"
    )?;
    for (key, stats) in &cells {
        let (am, asd) = mean_std(&stats.final_test_auc);
        let (rm, rsd) = mean_std(&stats.mean_ask_rate);
        writeln!(
            w,
            "{},{},{},{},{},{},{am:.6},{asd:.6},{rm:.6},{rsd:.6}",
            key.strategy,
            key.function,
            key.mode,
            key.noise,
            key.gamma_milli as f64 / 1000.0,
            stats.final_test_auc.len().max(stats.mean_ask_rate.len()),
        )?;
    }
    Ok(())
}
