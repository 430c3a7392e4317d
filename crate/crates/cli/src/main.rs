use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(vos_cli::run(vos_cli::Cli::parse()))
}
