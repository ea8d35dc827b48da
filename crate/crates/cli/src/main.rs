mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::io::Metric;

/// Sparse Frechet dimension reduction with graph-structured predictors.
#[derive(Parser, Debug)]
#[command(name = "gwire", version)]
struct Cli {
    /// Worker threads for replicates, folds and bootstrap fits.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the penalized estimator and write B-hat, directions and diagnostics.
    Fit(FitArgs),
    /// Estimate the structural dimension with the ladle.
    Dim(DimArgs),
    /// Run a synthetic benchmark scenario.
    Simulate(SimulateArgs),
    /// Sparse precision matrix and neighborhoods by the graphical lasso.
    Glasso(GlassoArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Predictors: n rows, p numeric columns, header row.
    #[arg(long = "x")]
    pub x: PathBuf,
    /// JSON array of n responses (numbers or tagged objects).
    #[arg(long)]
    pub responses: PathBuf,
    /// Require every response to live in this metric space.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Apply d / (1 + d) to the response distances.
    #[arg(long)]
    pub bound: bool,
    /// `none`, `glasso`, an adjacency JSON file or a precision CSV.
    #[arg(long, default_value = "none")]
    pub graph: String,
    /// Neighborhood weights when the graph file carries none.
    #[arg(long, default_value = "sqrt-size")]
    pub tau: String,
    #[arg(long, default_value = "gwire")]
    pub penalty: String,
    #[arg(long, default_value = "wire")]
    pub kernel: String,
    #[arg(long, default_value_t = 10)]
    pub slices: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// ADMM stopping tolerance (both residuals).
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Fixed penalty level; without it the level is cross-validated.
    #[arg(long, conflicts_with = "cv")]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub cv: bool,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 30)]
    pub n_lambda: usize,
    #[arg(long, default_value_t = 0.05)]
    pub min_ratio: f64,
    /// Structural dimension; defaults to 1 unless --ladle is given.
    #[arg(long, conflicts_with = "ladle")]
    pub d: Option<usize>,
    #[arg(long)]
    pub ladle: bool,
    #[arg(long, default_value_t = 100)]
    pub boot: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DimArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 100)]
    pub boot: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    /// Scenario JSON: example, n, p and optionally covariance, seed, replicates.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub example: Option<u8>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// `sigma1` or `sigma2`.
    #[arg(long)]
    pub covariance: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "gwire")]
    pub method: String,
    /// `oracle` or `glasso`.
    #[arg(long, default_value = "oracle")]
    pub graph: String,
    /// Estimate d per replicate instead of using the truth.
    #[arg(long)]
    pub ladle: bool,
    #[arg(long, default_value_t = 100)]
    pub boot: usize,
    #[arg(long, default_value_t = 10)]
    pub slices: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 30)]
    pub n_lambda: usize,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GlassoArgs {
    #[arg(long = "x")]
    pub x: PathBuf,
    /// Off-diagonal penalty; defaults to a tenth of the largest off-diagonal covariance.
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = gwire::par::with_jobs(cli.jobs, || match &cli.command {
        Command::Fit(a) => commands::fit(a, &argv),
        Command::Dim(a) => commands::dim(a, &argv),
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Glasso(a) => commands::glasso(a, &argv),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
