use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fluxlod_cli::{run, RunOptions};

#[derive(Parser)]
#[command(name = "fluxlod", version, about = "Run flux-scheme experiments from a JSON config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a config file.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "FLUXLOD_OUT", default_value = "out")]
        out: PathBuf,
        /// Worker threads (defaults to the available parallelism).
        #[arg(long, env = "FLUXLOD_WORKERS")]
        workers: Option<usize>,
        /// Seed for random initial data.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, workers, seed } => {
            let code = run(&config, &RunOptions { out, workers, seed });
            ExitCode::from(code as u8)
        }
    }
}
