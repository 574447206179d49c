//! Command-line front end for sweeps, replica predictions and timing.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jcd_core::harness::{replica_table, run_bench, run_sweep, to_csv, Config, Method};
use jcd_core::Error;

#[derive(Parser)]
#[command(
    name = "jcd",
    about = "Joint channel estimation and data recovery experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo sweep over SNR and trials, written as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated method tags.
        #[arg(long)]
        methods: Option<String>,
        /// Fill the wall-clock columns (makes the output run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Large-system MSE predictions per SNR.
    Replica {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median wall-clock per method and speedup ratios.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn write(path: &PathBuf, text: &str) -> Result<(), ExitCode> {
    std::fs::write(path, text).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed,
            methods,
            timing,
        } => {
            let mut cfg = match Config::load(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(s) = seed {
                cfg.scenario.seed = s;
            }
            if let Some(list) = methods {
                match list
                    .split(',')
                    .map(str::parse::<Method>)
                    .collect::<Result<Vec<_>, Error>>()
                {
                    Ok(m) => cfg.methods = m,
                    Err(e) => return config_error(e),
                }
            }
            cfg.timing |= timing;
            let records = match run_sweep(&cfg) {
                Ok(r) => r,
                Err(e) => return config_error(e),
            };
            if let Err(code) = write(&out, &to_csv(&records)) {
                return code;
            }
            let failed = records.iter().filter(|r| !r.ok()).count();
            if failed > 0 {
                eprintln!("{failed} of {} rows failed", records.len());
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Command::Replica { config, out } => {
            let cfg = match Config::load(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match replica_table(&cfg) {
                Ok(table) => match write(&out, &table) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(code) => code,
                },
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Bench { config } => {
            let cfg = match Config::load(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match run_bench(&cfg) {
                Ok(report) => {
                    print!("{}", report.render());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
