//! `hyperzoo`: generate model zoos, verify weight-space augmentations, train
//! hyper-representations and evaluate them with linear probes.

mod cmd_augment;
mod cmd_probe;
mod cmd_report;
mod cmd_train;
mod cmd_zoo;
mod config;
mod svg;

use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::CliError;

#[derive(Debug, Parser)]
#[command(name = "hyperzoo", version, about = "Model zoos and self-supervised hyper-representations")]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Run every parallel section on one thread so reductions are serialized.
    #[arg(long, global = true)]
    strict_determinism: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Model zoo commands.
    Zoo {
        #[command(subcommand)]
        command: ZooCommand,
    },
    /// Weight-space augmentation commands.
    Augment {
        #[command(subcommand)]
        command: AugmentCommand,
    },
    /// Train a hyper-representation encoder on a zoo.
    Train(cmd_train::TrainArgs),
    /// Fit linear probes on representations of a zoo.
    Probe(cmd_probe::ProbeArgs),
    /// Apply probes fitted on one zoo to other zoos.
    Ood(cmd_probe::OodArgs),
    /// Aggregate run directories into a markdown report.
    Report(cmd_report::ReportArgs),
}

#[derive(Debug, Subcommand)]
enum ZooCommand {
    /// Train a population of models and store every epoch's checkpoint.
    Generate(cmd_zoo::GenerateArgs),
}

#[derive(Debug, Subcommand)]
enum AugmentCommand {
    /// Check that permuted checkpoints are functionally equivalent.
    Verify(cmd_augment::VerifyArgs),
}

/// Matches of the innermost subcommand, used to tell explicit flags from defaults.
fn leaf(m: &ArgMatches) -> &ArgMatches {
    match m.subcommand() {
        Some((_, sub)) => leaf(sub),
        None => m,
    }
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<(), CliError> {
    let jobs = if cli.strict_determinism { 1 } else { cli.jobs.unwrap_or(0) };
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Core(hyperzoo::Error::Config(format!("thread pool: {e}"))))?;
    let jobs = rayon::current_num_threads();
    let m = leaf(matches);
    match cli.command {
        Command::Zoo {
            command: ZooCommand::Generate(a),
        } => cmd_zoo::run(a, m, jobs),
        Command::Augment {
            command: AugmentCommand::Verify(a),
        } => cmd_augment::run(a, m),
        Command::Train(a) => cmd_train::run(a, m),
        Command::Probe(a) => cmd_probe::run_probe(a, m),
        Command::Ood(a) => cmd_probe::run_ood(a, m),
        Command::Report(a) => cmd_report::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
