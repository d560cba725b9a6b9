use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ordlab_core::cli::{self, Command, RunConfig};
use ordlab_core::Error;

/// Simulate, estimate and diagnose ordinal-scale regressions.
#[derive(Debug, Parser)]
#[command(name = "ordlab", version)]
struct Args {
    /// weights, table, simulate, estimate, diagnose or reproduce.
    /// May instead come from the config file.
    command: Option<String>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "ORDLAB_JOBS")]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
    /// Figure to regenerate with `reproduce`.
    #[arg(long)]
    figure: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    /// Endogeneity of income in the illustrative design.
    #[arg(long)]
    rho: Option<f64>,
    /// Sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Include the unobserved columns in simulated datasets.
    #[arg(long)]
    with_latent: bool,
    /// Bootstrap replicates.
    #[arg(long)]
    bootstrap: Option<usize>,
}

fn config(args: Args) -> Result<RunConfig, Error> {
    let base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let flags = RunConfig {
        command: args.command.as_deref().map(Command::parse).transpose()?,
        preset: args.preset,
        figure: args.figure,
        n: args.n,
        seed: args.seed,
        jobs: args.jobs,
        output: args.output,
        with_latent: args.with_latent,
        bootstrap: args.bootstrap,
        rho: args.rho,
        ..Default::default()
    };
    Ok(base.overlay(flags))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match config(args).and_then(|c| cli::run(&c)) {
        Ok(outcome) => {
            for f in outcome.files.iter().chain([&outcome.manifest]) {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", cli::error_json(&e));
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
