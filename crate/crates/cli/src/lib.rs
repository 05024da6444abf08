//! Command-line front end for the dp2vae pipeline.
//!
//! Subcommands mirror the pipeline stages: `partition`, `pretrain`, `train`,
//! `generate`, `evaluate`, plus the standalone `accountant` and `audit`
//! tools. Every setting resolves flag > environment (`DP2VAE_*`) > config
//! file > default, and every run is a deterministic function of `--seed`.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 data or file-format
//! error, 4 numeric failure, 1 anything else.

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;

use commands::{
    AccountantArgs, AuditArgs, EvaluateArgs, GenerateArgs, PartitionArgs, PretrainArgs,
    SharedArgs, TrainArgs,
};
use dp2vae::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "dp2vae",
    version,
    about = "Differentially private synthetic image generation with pretrained encoders"
)]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a dataset into K disjoint subsets.
    Partition(PartitionArgs),
    /// Pretrain one encoder per subset (stage 1, non-private).
    Pretrain(PretrainArgs),
    /// Train the decoder under differential privacy (stage 2).
    Train(TrainArgs),
    /// Sample a labeled synthetic dataset from a trained decoder.
    Generate(GenerateArgs),
    /// Score synthetic data against a real test set.
    Evaluate(EvaluateArgs),
    /// Print the (epsilon, delta) guarantee for a training configuration.
    Accountant(AccountantArgs),
    /// Replay adjacent batches and check releases against the per-step bound.
    Audit(AuditArgs),
}

/// Maps an error to the documented exit code family.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter { .. }
        | Error::InvalidOrder(_)
        | Error::UnsupportedOrder(_)
        | Error::InvalidState(_)
        | Error::GridMismatch(_) => EXIT_USAGE,
        Error::Format { .. }
        | Error::Data(_)
        | Error::Shape(_)
        | Error::InvalidLabel { .. }
        | Error::InsufficientData(_)
        | Error::DegenerateData(_)
        | Error::Integrity(_)
        | Error::VersionMismatch { .. } => EXIT_DATA,
        Error::Numeric(_) | Error::NotPsd(_) | Error::AuditViolation { .. } => EXIT_NUMERIC,
        Error::Io { .. } => EXIT_FAILURE,
    }
}

/// Parses `args` and runs the selected command, writing to the given streams.
/// Returns the process exit code instead of exiting, so tests can call it
/// in-process.
pub fn run_with_output<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap marks --help/--version as errors that print to stdout.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render();
            if e.use_stderr() {
                write!(err, "{rendered}").ok();
            } else {
                write!(out, "{rendered}").ok();
            }
            return code;
        }
    };

    let result = match &cli.command {
        Command::Partition(a) => commands::run_partition(&cli.shared, a, out),
        Command::Pretrain(a) => commands::run_pretrain(&cli.shared, a, out),
        Command::Train(a) => commands::run_train(&cli.shared, a, out),
        Command::Generate(a) => commands::run_generate(&cli.shared, a, out),
        Command::Evaluate(a) => commands::run_evaluate(&cli.shared, a, out),
        Command::Accountant(a) => commands::run_accountant(&cli.shared, a, out),
        Command::Audit(a) => commands::run_audit(&cli.shared, a, out),
    };

    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            exit_code(&e)
        }
    }
}

/// Entry point for the binary: standard streams, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    run_with_output(args, &mut out, &mut err)
}

// ----------------------------------------------------------------------------
