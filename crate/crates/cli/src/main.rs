mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Command, FileConfig, Settings};

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Core(parisdiv_core::Error),
}

impl From<parisdiv_core::Error> for Failure {
    fn from(e: parisdiv_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_non_convergence() => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let s = Settings::merge(cli, file);
    let outcome = match &cli.command {
        Command::Root => commands::root(&s)?,
        Command::Transform(_) => commands::transform(&s)?,
        Command::H(_) => commands::h(&s)?,
        Command::Value(_) => commands::value(&s)?,
        Command::Barrier(_) => commands::barrier(&s)?,
        Command::Verify(_) => commands::verify(&s)?,
        Command::Figures(_) => commands::figures(&s)?,
        Command::Simulate(_) => commands::simulate(&s)?,
        Command::Compare(_) => commands::compare(&s)?,
    };
    // figures writes its own files into the --out directory
    let out = if matches!(cli.command, Command::Figures(_)) { None } else { s.out.as_deref() };
    outcome.emit(s.format, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
