//! `opqa`: ingest, label, train, evaluate and query opinion QA models.

mod args;
mod cache;
mod commands;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::{ConfigFile, Globals};
use crate::error::{CliError, Result, EXIT_USAGE};

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let globals = Globals {
        seed: cli.seed,
        config: ConfigFile::load(cli.config.as_deref())?,
    };
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Label(a) => commands::label(a),
        Command::Train(a) => commands::train_cmd(a, &globals),
        Command::Eval(a) => commands::eval_cmd(a, &globals),
        Command::Query(a) => commands::query(a),
        Command::Synth(a) => commands::synth(a, &globals),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE as u8),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
