//! `xva`: batch front end for bond pricing, basis calibration and valuation adjustments.
//!
//! Exit codes: 0 success, 2 input error, 3 calibration failure, 4 solver
//! non-convergence.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xva_core::bond_pricer::RecoveryConvention;
use xva_core::xva_engine::{Approach, Backend};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Calibration(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Calibration(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl From<xva_core::Error> for CliError {
    fn from(e: xva_core::Error) -> Self {
        use xva_core::Error as E;
        match &e {
            E::Calibration { solved, .. } => {
                let mut msg = format!("{e}\nmaturity,gamma,residual\n");
                for b in solved {
                    msg.push_str(&format!("{},{},{}\n", b.maturity, b.gamma, b.residual));
                }
                CliError::Calibration(msg.trim_end().to_string())
            }
            E::Divergence { .. } | E::Numerical { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "xva", version, about = "Bond-consistent valuation adjustments")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    Relative,
    Riskless,
    Absolute,
}

impl From<ConventionArg> for RecoveryConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Relative => RecoveryConvention::Relative,
            ConventionArg::Riskless => RecoveryConvention::Riskless,
            ConventionArg::Absolute => RecoveryConvention::Absolute,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Recursive,
    FirstOrder,
    BondImplied,
}

impl From<MethodArg> for Approach {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Recursive => Approach::Recursive,
            MethodArg::FirstOrder => Approach::FirstOrder,
            MethodArg::BondImplied => Approach::BondImplied,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mc,
    Pde,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mc => Backend::Mc,
            BackendArg::Pde => Backend::Pde,
        }
    }
}

/// Simulation overrides for the solver block of the trade file.
#[derive(Args, Clone)]
struct SimulationArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps (simulation grid or PDE time grid).
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Price a fixed-rate bond under a recovery convention.
    BondPrice {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "riskless")]
        convention: ConventionArg,
        #[arg(long, default_value = "bond_price.json")]
        report: PathBuf,
    },
    /// Bootstrap a piecewise-constant bond-CDS basis from bond quotes.
    Calibrate {
        quotes: PathBuf,
        curves: PathBuf,
        #[arg(long, value_enum, default_value = "riskless")]
        convention: ConventionArg,
        /// Calibrated basis curve file.
        #[arg(long, short, default_value = "basis.json")]
        output: PathBuf,
    },
    /// Value a trade: collateralized value, CVA, DVA and funding adjustments.
    Xva {
        trade: PathBuf,
        market: PathBuf,
        #[arg(long, value_enum, default_value = "recursive")]
        method: MethodArg,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[command(flatten)]
        sim: SimulationArgs,
        #[arg(long, default_value = "xva_report.json")]
        report: PathBuf,
        /// Exposure profile (Monte Carlo) or value surface (PDE).
        #[arg(long, default_value = "exposure.csv")]
        csv: PathBuf,
    },
    /// Compare the bond-consistent value with common FVA conventions.
    CompareConventions {
        trade: PathBuf,
        market: PathBuf,
        #[command(flatten)]
        sim: SimulationArgs,
        #[arg(long, default_value = "conventions.json")]
        report: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::BondPrice {
            config,
            convention,
            report,
        } => commands::bond_price(&config, convention.into(), &report),
        Command::Calibrate {
            quotes,
            curves,
            convention,
            output,
        } => commands::calibrate(&quotes, &curves, convention.into(), &output),
        Command::Xva {
            trade,
            market,
            method,
            backend,
            sim,
            report,
            csv,
        } => commands::xva(&commands::XvaRequest {
            trade: &trade,
            market: &market,
            approach: method.into(),
            backend: backend.map(Into::into),
            seed: sim.seed,
            paths: sim.paths,
            steps: sim.steps,
            report: &report,
            csv: &csv,
        }),
        Command::CompareConventions {
            trade,
            market,
            sim,
            report,
        } => {
            commands::compare_conventions(&trade, &market, sim.seed, sim.paths, sim.steps, &report)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
