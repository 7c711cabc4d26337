//! Configuration-driven experiments on top of the `mvsve` library.
//!
//! Exit codes: 0 when every verdict passes, 1 for usage, configuration and
//! I/O errors, 2 when a verdict fails, 3 when the particle system blows up.

pub mod commands;
pub mod config;
pub mod io;
mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, OutputFormat};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("numerical blow-up: {0}")]
    Numerical(String),
    #[error("{0}")]
    Library(mvsve::Error),
}

impl From<mvsve::Error> for CliError {
    fn from(e: mvsve::Error) -> Self {
        match e {
            mvsve::Error::NonFiniteState { .. } | mvsve::Error::NonFiniteOutput { .. } => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Library(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mvsve", version, about = "Simulate and check McKean-Vlasov stochastic Volterra equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulate without (or despite rejected) kernel certificates.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Ensemble file format; overrides `output.format`.
    #[arg(long, global = true, value_parser = parse_format)]
    pub format: Option<OutputFormat>,
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify both kernels and write their certificates.
    Certify,
    /// Simulate the particle system and write the ensemble.
    Simulate,
    /// Run moment, increment, Hölder and martingale diagnostics on an ensemble.
    Diagnose {
        /// `meta.json` of the ensemble, or its directory; defaults to the output directory.
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Mesh and particle refinement study.
    Convergence,
    /// Summarise the results found in the output directory.
    Report,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "bin" => Ok(OutputFormat::Bin),
        _ => Err(format!("unknown format `{s}`, expected csv or bin")),
    }
}

/// Loads the config named on the command line and applies the overrides.
fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    if let Command::Report = cli.command {
        let out = match (&cli.out, &cli.config) {
            (Some(o), _) => o.clone(),
            (None, Some(_)) => load_config(cli)?.output.dir,
            (None, None) => return Err(CliError::Usage("report needs --out or --config".into())),
        };
        return commands::cmd_report(&out);
    }
    let cfg = load_config(cli)?;
    let out = cfg.output.dir.clone();
    match &cli.command {
        Command::Certify => commands::cmd_certify(&cfg, &out),
        Command::Simulate => commands::cmd_simulate(&cfg, &out, cli.force),
        Command::Diagnose { ensemble } => commands::cmd_diagnose(&cfg, &out, ensemble.as_deref()),
        Command::Convergence => commands::cmd_convergence(&cfg, &out),
        Command::Report => unreachable!("handled above"),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| dispatch(cli)),
            Err(e) => Err(CliError::Usage(format!("cannot start {k} threads: {e}"))),
        },
        None => dispatch(cli),
    };
    match result {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs; parse errors exit 1.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
