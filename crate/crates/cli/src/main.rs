use std::process::ExitCode;

use clap::Parser;

mod commands;
mod paths;

use commands::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = commands::classify(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{class}]: {msg}");
            ExitCode::from(code)
        }
    }
}
