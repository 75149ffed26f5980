use std::process::ExitCode;

use clap::Parser;

use fedstas::cli::{execute, exit_status, Cli};

fn main() -> ExitCode {
    ExitCode::from(exit_status(execute(Cli::parse())))
}
