use std::process::ExitCode;

use clap::Parser;
use simaudit_cli::commands::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("audit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
