//! `jeirt`: one subcommand per process. Results go to `--out` as JSON with a
//! summary on stdout; progress is JSON lines on stderr.
//!
//! Exit codes: 0 success, 1 a proposition check found a violation, 2 usage or
//! configuration error, 3 data error.

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(jeirt::Error),
}

impl From<jeirt::Error> for CliError {
    fn from(e: jeirt::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Data(e)
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = commands::Cli::parse();
    match commands::run(cli.command) {
        Ok(done) => {
            println!("{}", serde_json::to_string_pretty(&done.summary).expect("summary serializes"));
            if done.holds {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "stage": "error", "message": e.to_string() }));
            ExitCode::from(e.exit_code())
        }
    }
}
