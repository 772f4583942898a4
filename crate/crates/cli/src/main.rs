//! `domino`: run cooling ensembles, train agents, simulate quantum
//! trajectories and serve the environment over TCP.

mod args;
mod error;
mod plot;
mod quantum;
mod serve;
mod simulate;
mod train;

use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "domino", version, about = "Feedback cooling of oscillator networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an ensemble of classical trajectories under one controller.
    Simulate(simulate::SimulateArgs),
    /// Train a soft actor-critic agent.
    Train(train::TrainArgs),
    /// Run quantum jump trajectories of a single oscillator.
    Quantum(quantum::QuantumCmdArgs),
    /// Serve the environment over a JSON-lines TCP protocol.
    Serve(serve::ServeArgs),
}

pub(crate) fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    if workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("config serialises");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DOMINO_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Train(a) => train::run(a),
        Command::Quantum(a) => quantum::run(a),
        Command::Serve(a) => serve::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("domino: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
