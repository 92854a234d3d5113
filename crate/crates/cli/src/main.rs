use std::io;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use eraps_cli::commands;
use eraps_cli::{Overrides, Purpose};

#[derive(Debug, Parser)]
#[command(name = "eraps", version, about = "Conformal prediction sets for time-series classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One report per (method, alpha).
    Run(Overrides),
    /// Coverage and set size over a (lambda, k_reg) grid.
    Sweep(Overrides),
    /// Synthetic checks of the coverage-gap rate, set convergence and the DKW bound.
    Verify(Overrides),
    /// Parse a dataset and print its summary.
    IngestCheck(Overrides),
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ERAPS_THREADS") {
        let n: usize = v.parse().context("ERAPS_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool> {
    init_threads()?;
    let (mut out, mut err) = (io::stdout().lock(), io::stderr());
    match cli.command {
        Command::Run(o) => {
            commands::run(&o.resolve(Purpose::Run)?, &mut out, &mut err)?;
        }
        Command::Sweep(o) => {
            commands::sweep(&o.resolve(Purpose::Sweep)?, &mut out, &mut err)?;
        }
        Command::Verify(o) => {
            let outcome = commands::verify(&o.resolve(Purpose::Verify)?, &mut out)?;
            return Ok(outcome.checks.iter().all(|c| c.pass));
        }
        Command::IngestCheck(o) => commands::ingest_check(&o.resolve(Purpose::Ingest)?, &mut out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
