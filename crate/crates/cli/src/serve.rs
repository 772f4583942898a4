use std::path::PathBuf;

use clap::Args;

use domino::envserver::Server;

use crate::args::{EnvArgs, ExperimentFile};
use crate::error::CliError;

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub addr: String,
    /// JSON experiment file; only its `episode` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub env: EnvArgs,
}

pub fn run(args: ServeArgs) -> Result<(), CliError> {
    let file = ExperimentFile::load(args.config.as_deref())?;
    let cfg = args.env.apply(file.episode)?;
    let server = Server::bind(args.addr.as_str(), cfg).map_err(|e| CliError::Io(format!("cannot listen on {}: {e}", args.addr)))?;
    let addr = server.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
    // the bound address goes to stdout so scripts can connect to port 0 binds
    println!("listening on {addr}");
    server.serve().map_err(|e| CliError::Io(e.to_string()))
}
