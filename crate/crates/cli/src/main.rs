mod args;
mod commands;
mod output;
mod verify;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use output::Failure;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Certify(a) => commands::certify(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Verify(a) => verify::verify(&a),
        Command::Examples(a) => commands::examples(&a),
        Command::RandomMdp(a) => commands::random_mdp(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
