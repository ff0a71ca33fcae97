//! `psfs`: render, reconstruct and probe perspective shape-from-shading scenes.

use clap::{Parser, Subcommand};
use psfs::experiment::{cmd_pipeline, cmd_probe, cmd_render, cmd_solve, CommandOutcome};
use psfs::io::Config;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "psfs", version, about = "Perspective shape from shading with light attenuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file (`key = value` lines, optional `[section]` headers).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; must already exist. Defaults to `output.dir` or the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "PSFS_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured surface to an image.
    Render(Common),
    /// Reconstruct a surface from an image.
    Solve(Common),
    /// Run the randomized checks of the Hamiltonian's structural properties.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render, solve and measure the error on a sequence of grids.
    Pipeline(Common),
}

fn run(cli: Cli) -> psfs::Result<CommandOutcome> {
    let common = match &cli.command {
        Command::Render(c) | Command::Solve(c) | Command::Pipeline(c) => c,
        Command::Probe { common, .. } => common,
    };
    if let Some(n) = common.threads {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = Config::load(&common.config)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.path("output.dir"))
        .unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Render(_) => cmd_render(&cfg, &out),
        Command::Solve(_) => cmd_solve(&cfg, &out),
        Command::Probe { seed, .. } => cmd_probe(&cfg, *seed, &out),
        Command::Pipeline(_) => cmd_pipeline(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
