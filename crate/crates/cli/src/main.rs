//! `vocalfx`: fit presets to pairs of stems, render presets, and analyse preset collections.

mod artifact;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use commands::{AnalyzeArgs, FitArgs, Outcome, RenderArgs, SampleArgs};

#[derive(Parser)]
#[command(name = "vocalfx", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a preset to a raw/processed stem pair. Exit code 2 when the run is filtered out.
    Fit(FitArgs),
    /// Render a mono stem through a preset.
    Render(RenderArgs),
    /// Correlations, clustering, PCA and perturbation responses of a preset collection.
    Analyze(AnalyzeArgs),
    /// Draw presets from a fitted PCA model.
    Sample(SampleArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // usage errors exit with 1; 2 is reserved for filtered runs
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let r = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Render(a) => commands::render_cmd(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Sample(a) => commands::sample(a),
    };
    match r {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Filtered) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
