use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jointalloc::config::load_config;
use jointalloc::sweep::{
    emit_csv, load_sweep, run_sweep, single_run_table, write_csv, SweepError, SweepTable,
};

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(
    name = "jointalloc",
    version,
    about = "Joint processing/bandwidth allocation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print (or write) its metrics as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a replicated parameter sweep.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn output(table: &SweepTable, out: Option<&PathBuf>) -> io::Result<()> {
    match out {
        Some(path) => emit_csv(table, path),
        None => write_csv(table, io::stdout().lock()),
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let invalid = |e: &dyn std::fmt::Display| (EXIT_INVALID, e.to_string());
    let runtime = |e: &dyn std::fmt::Display| (EXIT_RUNTIME, e.to_string());
    match cli.command {
        Command::Validate { config } => {
            let config = load_config(&config).map_err(|e| invalid(&e))?;
            config.resolve().map_err(|e| invalid(&e))?;
            println!(
                "ok: {} ({}, {} centers, {} users)",
                config.name,
                config.method,
                config.centers.len(),
                config.users.len()
            );
        }
        Command::Simulate { config, seed, out } => {
            let mut config = load_config(&config).map_err(|e| invalid(&e))?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let table = single_run_table(&config).map_err(|e| runtime(&e))?;
            output(&table, out.as_ref()).map_err(|e| runtime(&e))?;
        }
        Command::Sweep { spec, jobs, out } => {
            let spec = load_sweep(&spec).map_err(|e| match e {
                SweepError::Io { .. } => runtime(&e),
                _ => invalid(&e),
            })?;
            let outcome = run_sweep(&spec, jobs).map_err(|e| runtime(&e))?;
            if !outcome.table.rows.is_empty() {
                output(&outcome.table, out.as_ref()).map_err(|e| runtime(&e))?;
            }
            if !outcome.failures.is_empty() {
                let mut msg = format!(
                    "{} of {} sweep points failed:",
                    outcome.failures.len(),
                    spec.values.len()
                );
                for f in &outcome.failures {
                    msg.push_str(&format!(
                        "\n  {}={}: {}",
                        spec.axis.name(),
                        f.axis_value,
                        f.message
                    ));
                }
                return Err((EXIT_RUNTIME, msg));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
