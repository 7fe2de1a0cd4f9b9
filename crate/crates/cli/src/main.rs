// SPDX-License-Identifier: Apache-2.0

//! `covsteer` command-line front end.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on invalid input
//! (unparsable or invalid config, unreadable or corrupt log, logs that
//! cannot be compared).

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use covsteer_core::harness::{compare, run_experiment, ExperimentConfig, HarnessError, RunLog, Strategy};
use covsteer_core::report::{comparison_summary, write_comparison, write_report, REPORT_BINS};

#[derive(Parser)]
#[command(name = "covsteer", version, about = "Coverage-steering experiments on a cache-controller model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its run log.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "COVSTEER_OUT_DIR", default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare a candidate log (A) against a baseline log (B).
    Compare {
        log_a: PathBuf,
        log_b: PathBuf,
        #[arg(long, env = "COVSTEER_OUT_DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Write per-iteration histograms of a run log.
    Report {
        log: PathBuf,
        #[arg(long, env = "COVSTEER_OUT_DIR", default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = REPORT_BINS)]
        bins: usize,
    },
    /// Parse and validate a config file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Surrogate,
    Dqn,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Surrogate => Strategy::Surrogate,
            StrategyArg::Dqn => Strategy::Dqn,
        }
    }
}

/// Failure carrying its exit status.
enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Runtime(e) => e,
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(input)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        input(anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner()))
    })?;
    config
        .validate()
        .with_context(|| format!("{}: invalid config", path.display()))
        .map_err(input)?;
    Ok(config)
}

fn load_log(path: &Path) -> Result<RunLog, Failure> {
    let file = File::open(path)
        .with_context(|| format!("opening run log {}", path.display()))
        .map_err(input)?;
    RunLog::read_jsonl(BufReader::new(file))
        .with_context(|| format!("reading run log {}", path.display()))
        .map_err(input)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(runtime)
}

fn cmd_run(
    config: &Path,
    out: &Path,
    strategy: Option<StrategyArg>,
    iterations: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let mut config = load_config(config)?;
    if let Some(s) = strategy {
        config.strategy = s.into();
    }
    if let Some(n) = iterations {
        config.iterations = n;
    }
    if let Some(s) = seed {
        config.master_seed = s;
    }
    config.validate().context("invalid overrides").map_err(input)?;
    create_dir(out)?;
    let log = match run_experiment(&config) {
        Ok(log) => log,
        Err(HarnessError::IterationFailed { partial, iteration, message }) => {
            let path = out.join(log_name(&config));
            // Keep what ran so the failure can be inspected.
            let _ = std::fs::write(&path, partial.to_jsonl());
            return Err(runtime(anyhow!("iteration {iteration} failed: {message} (partial log {})", path.display())));
        }
        Err(e) => return Err(runtime(e)),
    };
    for it in &log.iterations {
        let mut line = format!(
            "iter {:>3}  mean {:>10.4}  max {:>10.4}  entropy {:>7.3}",
            it.iteration, it.mean_reward, it.max_reward, it.entropy
        );
        if let Some(e) = it.epsilon {
            line.push_str(&format!("  epsilon {e:.3}"));
        }
        if let Some(l) = it.surrogate_loss {
            line.push_str(&format!("  fit_mse {l:.4}"));
        }
        if let Some(t) = &it.termination {
            line.push_str(&format!("  stop: {t}"));
        }
        println!("{line}");
    }
    let path = out.join(log_name(&config));
    std::fs::write(&path, log.to_jsonl())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)?;
    println!("run log: {}", path.display());
    Ok(())
}

fn log_name(config: &ExperimentConfig) -> String {
    format!("runlog-{}-{}.jsonl", config.strategy, config.master_seed)
}

fn cmd_compare(a: &Path, b: &Path, out: &Path) -> Result<(), Failure> {
    let (la, lb) = (load_log(a)?, load_log(b)?);
    let cmp = compare(&la, &lb).map_err(input)?;
    create_dir(out)?;
    write_comparison(&cmp, out).map_err(runtime)?;
    print!("{}", comparison_summary(&cmp));
    Ok(())
}

fn cmd_report(log: &Path, out: &Path, bins: usize) -> Result<(), Failure> {
    if bins == 0 {
        return Err(input(anyhow!("--bins must be at least 1")));
    }
    let log = load_log(log)?;
    create_dir(out)?;
    for path in write_report(&log, out, bins).map_err(runtime)? {
        println!("{}", path.display());
    }
    if let Ok(text) = std::fs::read_to_string(out.join("histogram.txt")) {
        print!("{text}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            out,
            strategy,
            iterations,
            seed,
        } => cmd_run(config, out, *strategy, *iterations, *seed),
        Command::Compare { log_a, log_b, out } => cmd_compare(log_a, log_b, out),
        Command::Report { log, out, bins } => cmd_report(log, out, *bins),
        Command::ValidateConfig { config } => load_config(config).map(|_| println!("config ok")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
