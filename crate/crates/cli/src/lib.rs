//! Command-line front end: reads life tables or distance matrices, runs the
//! kernel PCA and metric covariance analyses, and writes plot-ready CSV.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::io::Write;

use clap::{Parser, Subcommand};

pub use config::{CommonArgs, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "mkpca",
    version,
    about = "Kernel PCA for metric-space-valued functional data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit kernel PCA; writes scores.csv, eigenvalues.csv, explained_variance.csv, model.json.
    Fit(CommonArgs),
    /// Score new units with a fitted model; writes scores.csv.
    Transform(CommonArgs),
    /// Metric covariance kernel on the time grid; writes cdm.csv and friends.
    Dm(CommonArgs),
    /// Generate a seeded synthetic life-table file.
    Synth(CommonArgs),
    /// Verify the analysis invariants on an input and print PASS/FAIL per property.
    Check(CommonArgs),
}

/// Runs one command, writing progress lines to `log`.
pub fn run(cli: &Cli, log: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit(args) => commands::cmd_fit(&RunConfig::resolve(args)?, log),
        Command::Transform(args) => commands::cmd_transform(&RunConfig::resolve(args)?, log),
        Command::Dm(args) => commands::cmd_dm(&RunConfig::resolve(args)?, log),
        Command::Synth(args) => commands::cmd_synth(&RunConfig::resolve(args)?, log),
        Command::Check(args) => commands::cmd_check(&RunConfig::resolve(args)?, log),
    }
}

/// Parses `argv`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(argv: I, log: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli, log) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
