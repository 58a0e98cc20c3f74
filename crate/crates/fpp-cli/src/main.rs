//! `fpp`: estimation and counterfactual analysis of asymmetric first-price
//! procurements from the command line.

mod commands;
mod data_io;
mod formats;

use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::CounterfactualMode;
use fpp_core::sampler::Restriction;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fpp",
    about = "Structural estimation of asymmetric first-price procurements",
    long_about = "Solves type-symmetric procurement equilibria, estimates cost densities and \
                  risk aversion by MCMC with latent cost scales, and simulates counterfactual \
                  reserve policies. All randomness derives from --seed; set FPP_WORKERS to pin \
                  the worker-pool size (results do not depend on it)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from the reference three-type design
    Simulate(SimulateArgs),
    /// Filter, type, and normalize a raw dataset
    Ingest(IngestArgs),
    /// Run the posterior sampler on a dataset
    Estimate(EstimateArgs),
    /// Evaluate reserve-price counterfactuals on a stored chain
    Counterfactual(CounterfactualArgs),
    /// Numerical diagnostics
    Diagnose(DiagnoseArgs),
    /// Posterior summaries and predictive density bands from a stored chain
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation design (only `s7`, the ten-configuration reference design)
    #[arg(long, default_value = "s7")]
    design: String,
    /// Number of procurements; a multiple of the 10 design configurations
    #[arg(long, short = 'T')]
    t: usize,
    /// Latent cost-scale spread of the truth
    #[arg(long, default_value_t = 0.1)]
    sigma_u: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Raw dataset CSV (procurement_id,reserve_price,bidder_id,bid)
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RestrictArg {
    None,
    CommonEta,
    RiskNeutral,
}

impl From<RestrictArg> for Restriction {
    fn from(r: RestrictArg) -> Restriction {
        match r {
            RestrictArg::None => Restriction::None,
            RestrictArg::CommonEta => Restriction::CommonEta,
            RestrictArg::RiskNeutral => Restriction::RiskNeutral,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Tilt-basis order of the estimated cost densities
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Total Metropolis iterations
    #[arg(long, default_value_t = 20_000)]
    m1: usize,
    /// Keep every thin-th iteration
    #[arg(long, default_value_t = 50)]
    thin: usize,
    /// Kept draws dropped from the front
    #[arg(long, default_value_t = 200)]
    burn: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameter restriction of the restricted analyses
    #[arg(long, value_enum, default_value_t = RestrictArg::None)]
    restrict: RestrictArg,
    /// Iteration after which proposals stop adapting
    #[arg(long)]
    adapt_until: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CounterfactualArgs {
    /// Chain CSV from `estimate`
    #[arg(long)]
    chain: PathBuf,
    /// Dataset whose configurations weight the predictive cost
    #[arg(long)]
    data: PathBuf,
    /// common, type-specific, or add-bidder:<type>
    #[arg(long)]
    mode: CounterfactualMode,
    /// Posterior draws used (evenly spaced subsample of the chain)
    #[arg(long, default_value_t = 1_000)]
    m2: usize,
    /// Simulated procurements per draw and configuration
    #[arg(long, default_value_t = 5_000)]
    m3: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(subcommand)]
    what: DiagnoseCommand,
}

#[derive(Subcommand)]
enum DiagnoseCommand {
    /// Solve the boundary-density system for the per-type risk parameters
    Identify {
        /// Six boundary densities: g_a,g_b per type pair (1,2), (1,3), (2,3)
        #[arg(long)]
        densities: String,
    },
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    chain: PathBuf,
    /// Cost grid resolution of the predictive density bands
    #[arg(long, default_value_t = 21)]
    grid_points: usize,
    #[arg(long)]
    out: PathBuf,
}

fn failure_code(e: &fpp_core::Error) -> u8 {
    use fpp_core::Error::*;
    match e {
        Domain(_) | Shape(_) | InvalidInput(_) => 1,
        SolveFailed { .. } | EmptyTruncation { .. } | InitInfeasible { .. } | Singular { .. } => 2,
    }
}

fn run(cli: Cli) -> fpp_core::Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            if a.design != "s7" {
                return Err(fpp_core::Error::input(format!(
                    "unknown design {:?}; only s7 is available",
                    a.design
                )));
            }
            commands::simulate(&commands::SimulateOpts {
                t: a.t,
                sigma_u: a.sigma_u,
                seed: a.seed,
                out: a.out,
            })
        }
        Command::Ingest(a) => commands::ingest(&commands::IngestOpts { data: a.data, out: a.out }),
        Command::Estimate(a) => commands::estimate(&commands::EstimateOpts {
            data: a.data,
            k: a.k,
            m1: a.m1,
            thin: a.thin,
            burn: a.burn,
            seed: a.seed,
            restriction: a.restrict.into(),
            adapt_until: a.adapt_until,
            out: a.out,
        }),
        Command::Counterfactual(a) => commands::counterfactual(&commands::CounterfactualOpts {
            chain: a.chain,
            data: a.data,
            mode: a.mode,
            m2: a.m2,
            m3: a.m3,
            seed: a.seed,
            out: a.out,
        }),
        Command::Diagnose(a) => match a.what {
            DiagnoseCommand::Identify { densities } => commands::diagnose_identify(&densities),
        },
        Command::Summarize(a) => commands::summarize(&commands::SummarizeOpts {
            chain: a.chain,
            grid_points: a.grid_points,
            out: a.out,
        }),
    }
}

fn main() -> ExitCode {
    if let Ok(workers) = std::env::var("FPP_WORKERS") {
        match workers.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: FPP_WORKERS must be a positive integer, found {workers:?}");
                return ExitCode::from(1);
            }
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(failure_code(&e))
        }
    }
}
