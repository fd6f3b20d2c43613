//! `hmmn`: generate synthetic data, train, evaluate, run the baseline
//! ablation grid, check gradients and dump attention weights.
//!
//! Exit status is 0 on success, 1 on a runtime failure (including a failed
//! gradient check) and 2 on a usage error.

mod args;
mod commands;
mod files;
mod heatmap;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// An invalid flag or config value, detected before any work starts.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HMMN_LOG", "warn"))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(UsageError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match &cli.command {
        Command::Generate(a) => commands::generate(a)?,
        Command::Train(a) => commands::train_cmd(a)?,
        Command::Eval(a) => commands::eval(a)?,
        Command::Ablate(a) => commands::ablate(a)?,
        Command::Gradcheck(a) => return commands::gradcheck(a),
        Command::Attend(a) => commands::attend(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
