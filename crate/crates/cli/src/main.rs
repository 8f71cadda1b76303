use std::io::{self, Write};
use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use proclens_cli::cli::{execute, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = execute(cli, &mut stdin.lock(), &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => Cli::command().error(clap::error::ErrorKind::InvalidValue, msg).exit(),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
