mod analyze;
mod args;
mod manifest;
mod simulate;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Outcome of a subcommand that ran to completion.
pub enum Outcome {
    Success,
    /// Verification failed or there was nothing to analyze.
    DomainFailure,
}

/// Errors that abort a subcommand.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

const EXIT_DOMAIN: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SPI_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("SPI_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Metrics(a) => analyze::metrics(a),
        Command::Compare(a) => analyze::compare(a),
        Command::Phase(a) => analyze::phase(a),
    });

    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::DomainFailure) => ExitCode::from(EXIT_DOMAIN),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DOMAIN)
        }
    }
}
