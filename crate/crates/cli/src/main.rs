use clap::Parser;
use navsst_cli::{exit_code, run, Cli};
use std::process::ExitCode;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("navsst: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
