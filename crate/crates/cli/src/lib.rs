//! Command-line driver: aggregate feature maps, fit whitening, build model
//! ensembles and evaluate retrieval pipelines.

pub mod args;
pub mod commands;
pub mod config;

use anyhow::{bail, Context, Result};

use args::{Cli, Command};
use config::RunConfig;

pub use commands::{cmd_aggregate, cmd_ensemble, cmd_eval, cmd_fit_whiten, format_table, EvalSummary};

/// Runs one parsed invocation inside a worker pool of the requested size.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(cfg.threads).unwrap_or(0);
    if cli.threads == Some(0) {
        bail!("--threads must be positive");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting worker pool")?;
    pool.install(|| match &cli.command {
        Command::Aggregate(a) => cmd_aggregate(a, &cfg),
        Command::FitWhiten(a) => cmd_fit_whiten(a, &cfg),
        Command::Ensemble(a) => cmd_ensemble(a, &cfg),
        Command::Eval(a) => {
            let summary = cmd_eval(a, &cfg)?;
            print!("{}", format_table(&summary));
            Ok(())
        }
    })
}
