//! `coulomb2d`: solve, sample, analyze and verify two-dimensional Coulomb
//! gases from JSON configurations.

mod commands;
mod exit;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use exit::CliError;

#[derive(Debug, Parser)]
#[command(name = "coulomb2d", version, about = "Two-dimensional Coulomb gas toolkit")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for measures, archives, reports and manifests.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; also capped by COULOMB2D_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for mu_V and mu_theta and save both with sidecars.
    Equilibrium,
    /// Run Metropolis replicas and write sample archives.
    Sample(SampleArgs),
    /// Run the estimator suite over sample archives.
    Analyze(AnalyzeArgs),
    /// Run the deterministic identity checks.
    Verify(VerifyArgs),
    /// Bundle the CSV curves of analysis reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, conflicts_with = "beta_rule")]
    pub beta: Option<f64>,
    /// `c*N^p` or `c/(sqrt(N)*log(N))`.
    #[arg(long)]
    pub beta_rule: Option<String>,
    /// Total Metropolis proposals per replica, burn-in included.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub burnin: Option<u64>,
    /// Proposals between recorded frames.
    #[arg(long)]
    pub thin: Option<u64>,
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Archive directory; defaults to `<out-dir>/archives`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Archives to analyze; defaults to `<out-dir>/archives/*.archive`.
    pub archives: Vec<PathBuf>,
    /// Saved mu_theta; its sidecar is the same path with a `.json`
    /// extension. Defaults to `<out-dir>/mu_theta.bin`.
    #[arg(long)]
    pub mu: Option<PathBuf>,
    /// Limiting intensity; defaults to mu_V at the window centre.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Cells per side of the fine splitting grid.
    #[arg(long)]
    pub cells: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Analysis reports; defaults to `<out-dir>/analysis_report.json`.
    pub reports: Vec<PathBuf>,
    /// Output directory; defaults to `<out-dir>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    let threads = cli.threads;
    let result: Result<(), CliError> = coulomb2d::parallel::with_threads(threads, || commands::run(&cli));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
