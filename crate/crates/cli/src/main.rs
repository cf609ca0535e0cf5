//! `viscon`: visual concreteness scoring, cross-modal alignment and
//! retrievability analysis from the command line.
//!
//! Exit codes: 0 on success, 1 for runtime or data errors, 2 for usage errors.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = g.threads {
        pool = pool.num_threads(t as usize);
    }
    pool.build_global().context("configuring the thread pool")?;
    std::fs::create_dir_all(&g.out_dir).with_context(|| format!("creating {}", g.out_dir.display()))?;
    match &cli.command {
        Command::Index(a) => commands::index(a, g, cli),
        Command::Score(a) => commands::score(a, g, cli),
        Command::TopicsScore(a) => commands::topics_score(a, g, cli),
        Command::Align(a) => commands::align(a, g, cli),
        Command::Eval(a) => commands::eval(a, g, cli),
        Command::Analyze(a) => commands::analyze(a, g, cli),
        Command::Synth(a) => commands::synth(a, g, cli),
        Command::Report(a) => commands::report(a, g, cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    // clap exits with status 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
