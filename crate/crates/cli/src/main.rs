use std::process::ExitCode;

use clap::Parser;
use fairlake_cli::{main_with_args, Cli};

fn main() -> ExitCode {
    main_with_args(Cli::parse())
}
