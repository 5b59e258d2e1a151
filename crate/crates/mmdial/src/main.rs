use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = mmdial::cli::Cli::parse();
    match mmdial::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
