use std::process::ExitCode;

use cdo_hjmm_cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()).code())
}
