mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Input(#[from] vipac::Error),
    /// Training stopped on a non-finite value; outputs were still written.
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    // clap exits with 2 on usage errors and 0 for --help/--version
    let cli = Cli::parse_from(argv);
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
