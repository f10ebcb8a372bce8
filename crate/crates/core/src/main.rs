use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use posterior_mac::cli::{execute, exit_code, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = execute(&cli.command);
    match &result {
        Ok((out, _)) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&result)
}
