use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "urns", version, about = "Analyze and simulate systems of interacting urns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Predict limits, rates and covariances; writes analysis.json.
    Analyze {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Simulate trajectories; writes trajectory.csv.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Simulate an ensemble; writes ensemble.json and covariance.csv.
    Ensemble {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare an ensemble with the predictions; writes verify.json.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long)]
        workers: Option<usize>,
        /// Comma list of limits, total_balls, rate, clt, regime_c.
        #[arg(long)]
        checks: Option<String>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Merge analysis.json and ensemble.json from --out into report.json and series.csv.
    Report {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub steps: u64,
    /// `10,100,1000` or `log:10:1e6:12`; the final step is always included.
    #[arg(long)]
    pub checkpoints: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct TolArgs {
    #[arg(long)]
    pub tol_limit_atol: Option<f64>,
    #[arg(long)]
    pub tol_limit_se: Option<f64>,
    #[arg(long)]
    pub tol_frobenius: Option<f64>,
    #[arg(long)]
    pub tol_skewness: Option<f64>,
    #[arg(long)]
    pub tol_kurtosis: Option<f64>,
    #[arg(long)]
    pub tol_block_se: Option<f64>,
    #[arg(long)]
    pub tol_clt_se: Option<f64>,
    #[arg(long)]
    pub tol_slope_polynomial: Option<f64>,
    #[arg(long)]
    pub tol_settle_fraction: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { spec, out } => commands::analyze(&spec, &out),
        Command::Simulate { run, reps } => commands::simulate(&run, reps),
        Command::Ensemble { run, reps, workers } => commands::ensemble(&run, reps, workers),
        Command::Verify { run, reps, workers, checks, tol } => {
            commands::verify(&run, reps, workers, checks.as_deref(), &tol)
        }
        Command::Report { out } => commands::report(&out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
