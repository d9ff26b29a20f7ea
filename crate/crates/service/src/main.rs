use std::process::ExitCode;

use clap::Parser;
use transens_service::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
