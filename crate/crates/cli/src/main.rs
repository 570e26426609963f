//! `topexpert` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topexpert::Error;

use config::Overrides;

#[derive(Parser)]
#[command(
    name = "topexpert",
    version,
    about = "Topology-specific mixture of experts for molecular property prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics and per-molecule descriptors.
    Featurize(Common),
    /// Writes the split manifest.
    Split(Common),
    /// Trains a model and writes its checkpoint, history and metrics.
    Train(Common),
    /// Evaluates a checkpoint on a subset.
    Eval(Common),
    /// Label-free topology clustering of every molecule.
    Cluster(Common),
    /// Grid search over the configured axes and seeds.
    Grid(Common),
    /// Cluster usage per ring-count group and the molecules nearest the centroids.
    Inspect(Common),
}

type Handler = fn(&config::Resolved) -> Result<(), Error>;

fn run(cli: Cli) -> Result<(), Error> {
    let (common, cmd): (&Common, Handler) = match &cli.command {
        Command::Featurize(c) => (c, commands::featurize),
        Command::Split(c) => (c, commands::split),
        Command::Train(c) => (c, commands::train),
        Command::Eval(c) => (c, commands::eval),
        Command::Cluster(c) => (c, commands::cluster),
        Command::Grid(c) => (c, commands::grid),
        Command::Inspect(c) => (c, commands::inspect_cmd),
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
    };
    let resolved = config::load(&common.config, &overrides)?;
    cmd(&resolved)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
