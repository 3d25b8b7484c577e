//! `sscr`: population size estimation from single-source capture-recapture
//! counts.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{DiagnosticOpts, EstimateOpts, ModelOpts, OutputOpts, RunConfig, SimulateOpts, StrataOpts};

/// Exit codes.
pub const EXIT_MODEL: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_MODEL, message: message.into() }
    }
}

impl From<sscr::Error> for CliError {
    fn from(e: sscr::Error) -> Self {
        let code = match e {
            sscr::Error::Io { .. } | sscr::Error::Csv { .. } => EXIT_IO,
            _ => EXIT_MODEL,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "sscr", version, about = "Single-source capture-recapture population size estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and estimate the population size
    Fit(FitArgs),
    /// Population size by strata
    Strata(StrataArgs),
    /// Goodness of fit, residuals and leave-one-out influence
    Diagnostics(DiagnosticsArgs),
    /// Fit and estimate the variance of the population size by bootstrap
    Bootstrap(BootstrapArgs),
    /// Draw counts from a family and write them as CSV
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// Flat TOML file with default values for any option
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    output: OutputOpts,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    estimate: EstimateOpts,
}

#[derive(Args)]
struct StrataArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    estimate: EstimateOpts,
    #[command(flatten)]
    strata: StrataOpts,
}

#[derive(Args)]
struct DiagnosticsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    estimate: EstimateOpts,
    #[command(flatten)]
    diagnostics: DiagnosticOpts,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    estimate: EstimateOpts,
    /// Write the bootstrap replicates of the population size to this CSV file
    #[arg(long)]
    replicates_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat TOML file with default values for any option
    #[arg(long)]
    config: Option<PathBuf>,
    /// Family name
    #[arg(long)]
    family: Option<String>,
    /// Link overrides, as for fit
    #[arg(long)]
    lambda_link: Option<String>,
    #[arg(long)]
    omega_link: Option<String>,
    #[arg(long)]
    pi_link: Option<String>,
    #[arg(long)]
    alpha_link: Option<String>,
    /// Seed for the draws [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    simulate: SimulateOpts,
    /// Write the CSV here instead of standard output
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Flags layered over the config file, if any.
fn resolve(config: Option<&PathBuf>, flags: RunConfig) -> Result<RunConfig, CliError> {
    match config {
        Some(p) => Ok(flags.over(RunConfig::load(p)?)),
        None => Ok(flags),
    }
}

fn call_echo() -> String {
    let mut args = std::env::args();
    let mut out = String::from("sscr");
    args.next();
    for a in args {
        out.push(' ');
        if a.is_empty() || a.contains(|c: char| c.is_whitespace() || "\"'~*&|<>$".contains(c)) {
            out.push('"');
            out.push_str(&a.replace('"', "\\\""));
            out.push('"');
        } else {
            out.push_str(&a);
        }
    }
    out
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let call = call_echo();
    match cli.command {
        Command::Fit(a) => {
            let cfg = RunConfig { model: a.model, estimate: a.estimate, output: a.common.output, ..Default::default() };
            commands::fit(&resolve(a.common.config.as_ref(), cfg)?, call)
        }
        Command::Strata(a) => {
            let cfg = RunConfig {
                model: a.model,
                estimate: a.estimate,
                output: a.common.output,
                strata: a.strata,
                ..Default::default()
            };
            commands::strata(&resolve(a.common.config.as_ref(), cfg)?, call)
        }
        Command::Diagnostics(a) => {
            let cfg = RunConfig {
                model: a.model,
                estimate: a.estimate,
                output: a.common.output,
                diagnostics: a.diagnostics,
                ..Default::default()
            };
            commands::diagnostics(&resolve(a.common.config.as_ref(), cfg)?, call)
        }
        Command::Bootstrap(a) => {
            let cfg = RunConfig { model: a.model, estimate: a.estimate, output: a.common.output, ..Default::default() };
            commands::bootstrap(&resolve(a.common.config.as_ref(), cfg)?, call, a.replicates_out.as_deref())
        }
        Command::Simulate(a) => {
            let mut cfg = RunConfig { simulate: a.simulate, ..Default::default() };
            cfg.model.family = a.family;
            cfg.model.lambda_link = a.lambda_link;
            cfg.model.omega_link = a.omega_link;
            cfg.model.pi_link = a.pi_link;
            cfg.model.alpha_link = a.alpha_link;
            cfg.estimate.seed = a.seed;
            cfg.output.output = a.output;
            commands::simulate(&resolve(a.config.as_ref(), cfg)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: the fit did not converge");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
