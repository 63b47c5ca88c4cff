use std::io;
use std::process::ExitCode;

use clap::Parser;
use gem_cli::{run, Cli, SEED_ENV};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = std::env::var(SEED_ENV).ok();
    let mut stdout = io::stdout().lock();
    match run(&cli.command, seed.as_deref(), &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gem: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
