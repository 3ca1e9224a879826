//! `minidl`: train, evaluate and inspect networks from JSON run configs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric or training
//! error, 4 I/O error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use minidl::run::{run_command, Command, RunOptions};
use minidl::Error;

#[derive(Parser)]
#[command(
    name = "minidl",
    version,
    about = "A from-scratch deep-learning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split, standardize, train with early stopping, evaluate and persist.
    Train(Common),
    /// Re-evaluate the model saved by `train` on the test split.
    Eval(Common),
    /// Validate the config and print the inferred shape tables.
    Check(Common),
    /// Compare backpropagation with finite differences; fails on mismatch.
    Gradcheck(Common),
    /// Input-gradient map of one output for one test example.
    Saliency(Common),
    /// Retrain with components removed and compare.
    Ablate(Common),
    /// Train a recurrent sequence model with full BPTT.
    RnnTrain(Common),
    /// Train a generator/discriminator pair.
    GanTrain(Common),
    /// Train a plain or variational autoencoder.
    VaeTrain(Common),
    /// Write the configured dataset to a file.
    SynthData(Common),
}

impl Cmd {
    fn split(self) -> (Command, Common) {
        match self {
            Cmd::Train(c) => (Command::Train, c),
            Cmd::Eval(c) => (Command::Eval, c),
            Cmd::Check(c) => (Command::Check, c),
            Cmd::Gradcheck(c) => (Command::Gradcheck, c),
            Cmd::Saliency(c) => (Command::Saliency, c),
            Cmd::Ablate(c) => (Command::Ablate, c),
            Cmd::RnnTrain(c) => (Command::RnnTrain, c),
            Cmd::GanTrain(c) => (Command::GanTrain, c),
            Cmd::VaeTrain(c) => (Command::VaeTrain, c),
            Cmd::SynthData(c) => (Command::SynthData, c),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::Diverged { .. } => 3,
        Error::Io(_)
        | Error::Magic { .. }
        | Error::Truncated(_)
        | Error::Manifest(_)
        | Error::Load(_) => 4,
        Error::Config(_)
        | Error::Invalid(_)
        | Error::Dimension(_)
        | Error::State(_)
        | Error::Unsupported(_) => 2,
    }
}

fn run(command: Command, common: &Common) -> anyhow::Result<()> {
    let options = RunOptions {
        seed: common.seed,
        out: common.out.clone(),
    };
    let outcome = run_command(command, &common.config, &options)
        .with_context(|| format!("{command} failed for {}", common.config.display()))?;
    if !common.quiet {
        // A closed pipe (e.g. `| head`) is not a failure of the run.
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{}", outcome.summary.trim_end());
        if let Some(r) = &outcome.report {
            let _ = writeln!(
                out,
                "fingerprint {}, {} file(s) written",
                r.fingerprint,
                r.files.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (command, common) = Cli::parse().command.split();
    match run(command, &common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let lib = err.downcast_ref::<Error>();
            match lib {
                Some(Error::Invalid(list)) => {
                    eprintln!("error: {err}");
                    for issue in list {
                        eprintln!("  {issue}");
                    }
                }
                _ => eprintln!("error: {err:#}"),
            }
            ExitCode::from(lib.map_or(1, exit_code))
        }
    }
}
