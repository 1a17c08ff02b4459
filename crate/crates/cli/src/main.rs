//! Command-line front end: data simulation, annealed flow runs, ensemble
//! MCMC runs and evidence reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Method;
use config::RunConfig;

/// Configuration or input problem; exits with status 1.
#[derive(Debug)]
pub struct Validation(pub String);

impl std::fmt::Display for Validation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

#[derive(Parser)]
#[command(name = "annealflow", version, about = "Annealed normalizing-flow inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic repressilator dataset.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Train a flow with the adaptive annealing schedule.
    NfRun {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the annealed ensemble MCMC baseline.
    McmcRun {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Estimate the marginal likelihood from a finished run directory.
    Evidence {
        #[arg(short, long)]
        run: PathBuf,
        #[arg(short, long, value_enum, default_value = "both")]
        method: Method,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use annealflow::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<Validation>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidInput(_) | E::Format(_) | E::Io(_) | E::Json(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { config } => commands::simulate(&RunConfig::load(&config)?),
        Command::NfRun { config } => commands::nf_run(&RunConfig::load(&config)?),
        Command::McmcRun { config } => commands::mcmc_run(&RunConfig::load(&config)?),
        Command::Evidence { run, method } => commands::evidence(&run, method),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
