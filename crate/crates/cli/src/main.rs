//! `nsynth` command-line front end.

mod cli;
mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use crate::cli::{Cli, Command};
use crate::error::CliError;

fn main() -> ExitCode {
    match run() {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run() -> Result<String, CliError> {
    let raw: Vec<String> = std::env::args().collect();
    let argv = config::merge(&Cli::command(), raw)?;
    let matches = match Cli::command()
        .args_override_self(true)
        .try_get_matches_from(&argv)
    {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            return Err(CliError::Usage(first_line(&e.to_string())));
        }
    };
    let cli =
        Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(first_line(&e.to_string())))?;
    if let Some(n) = cli.threads {
        // a second build only fails when a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match cli.command {
        Command::Estimate(a) => commands::estimate(&a),
        Command::Placebo(a) => commands::placebo(&a),
        Command::Hull(a) => commands::hull(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Robust(a) => commands::robust(&a),
    }
}

fn first_line(s: &str) -> String {
    s.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("invalid arguments")
        .trim_start_matches("error: ")
        .to_string()
}
