//! `mcp`: changepoint localization from the command line.
//!
//! Exit status: 0 on success, 2 for invalid input or arguments, 3 when the
//! computation itself fails.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use commands::Failure;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { Failure::VALIDATION } else { 0 };
            // Printing can only fail on a closed stream, which leaves nobody to tell.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
