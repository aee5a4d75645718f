//! `exactpc` command-line interface.
//!
//! Exit status: 0 on success, 1 when an acceptance check fails, 2 on usage or
//! parse errors, 3 when a sample budget or replay stream runs out.

mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::{Failure, EXIT_USAGE};

fn run(cli: &Cli) -> Result<commands::Output, Failure> {
    match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Sample(a) => commands::sample(a),
        Command::Learn(a) => commands::learn_cmd(a),
        Command::Bench(a) => commands::bench(a),
        Command::Verify(a) => commands::verify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.stdout.as_bytes());
            let _ = stdout.flush();
            ExitCode::from(out.code as u8)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
