use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use al_lab::config::ExperimentConfig;
use al_lab::error::{Error, Result};
use al_lab::experiment::run_experiment;
use al_lab::oracle::Strategy;
use al_lab::report::{run_sweep, write_report, SweepSpec};

/// Desk-scale active learning laboratory.
#[derive(Parser)]
#[command(name = "al-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key, e.g. --set oracle.gamma=0.8 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment, streaming one JSONL record per epoch.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the epoch log here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seed x strategy x noise grid, one directory per cell.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (env AL_LAB_OUT_DIR, then ./sweep).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to run.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2])]
        seeds: Vec<u64>,
        /// Questioning strategies to compare.
        #[arg(long, value_delimiter = ',', default_values = ["no-oracle", "soqal", "full-oracle"])]
        strategies: Vec<String>,
        /// Oracle label-flip probabilities.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0])]
        gammas: Vec<f64>,
    },
    /// Aggregate sweep logs into a summary CSV.
    Report {
        /// Directory holding run.jsonl files (recursively).
        dir: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in acceptance checks.
    Selftest,
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown strategy '{s}'")))
}

fn out_writer(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn configure_workers() {
    #[cfg(feature = "parallel")]
    if let Ok(n) = std::env::var("AL_LAB_WORKERS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main_inner() -> Result<i32> {
    configure_workers();
    match Cli::parse().command {
        Command::Run { config, out } => {
            let cfg = config.resolve()?;
            let mut w = out_writer(out.as_ref())?;
            let summary = run_experiment(&cfg, &mut w)?;
            w.flush()?;
            if let Some(auc) = summary.final_test_auc {
                eprintln!("final test AUC {auc:.4}");
            }
            Ok(0)
        }
        Command::Sweep { config, out, seeds, strategies, gammas } => {
            let cfg = config.resolve()?;
            let spec = SweepSpec {
                seeds,
                strategies: strategies.iter().map(|s| parse_strategy(s)).collect::<Result<_>>()?,
                gammas,
            };
            let dir = out
                .or_else(|| std::env::var_os("AL_LAB_OUT_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("sweep"));
            let cells = run_sweep(&cfg, &spec, &dir)?;
            eprintln!("{} runs written under {}", cells.len(), dir.display());
            Ok(0)
        }
        Command::Report { dir, out } => {
            let mut w = out_writer(out.as_ref())?;
            write_report(&dir, &mut w)?;
            w.flush()?;
            Ok(0)
        }
        Command::Selftest => {
            let results = al_lab::acceptance::run_all();
            let mut failed = false;
            for r in &results {
                let status = if r.passed { "pass" } else { "FAIL" };
                println!("[{status}] {:2}. {} — {}", r.index, r.name, r.detail);
                failed |= !r.passed;
            }
            Ok(if failed { 3 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
