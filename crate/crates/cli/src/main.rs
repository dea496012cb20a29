use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isobound_cli::{
    execute, BoundParams, CliError, Command, KepsParams, OutputFormat, RecoverParams, RunConfig, SimulateParams,
    VerifyParams, EXIT_CONFIG,
};

/// Quantitative midpoint bounds for φ-isometries, simulation sweeps,
/// signed-permutation recovery and K_eps search.
#[derive(Debug, Parser)]
#[command(name = "isobound", version)]
struct Cli {
    /// RNG seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format (overrides the config file).
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Omit timestamps so identical configs give byte-identical output.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// JSON RunConfig; its subcommand must match the one invoked.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Optimized midpoint bounds over a distance grid.
    Bound(ConfigArg),
    /// Compare simulated midpoint deviations with the bound.
    Simulate(ConfigArg),
    /// Recover the signed permutation behind a perturbed operator.
    Recover(ConfigArg),
    /// Sweep lower bounds for K_eps over an eps grid.
    Keps(ConfigArg),
    /// Run the acceptance criteria.
    VerifySuite {
        #[command(flatten)]
        config: ConfigArg,
        /// Criterion ids or module names (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let (arg, default) = match &cli.command {
        Sub::Bound(a) => (a, Command::Bound(BoundParams::default())),
        Sub::Simulate(a) => (a, Command::Simulate(SimulateParams::default())),
        Sub::Recover(a) => (a, Command::Recover(RecoverParams::default())),
        Sub::Keps(a) => (a, Command::Keps(KepsParams::default())),
        Sub::VerifySuite { config, .. } => (config, Command::VerifySuite(VerifyParams::default())),
    };
    let mut cfg = match &arg.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            if cfg.command.name() != default.name() {
                return Err(CliError::config(format!(
                    "config is for '{}' but '{}' was invoked",
                    cfg.command.name(),
                    default.name()
                )));
            }
            cfg
        }
        None => RunConfig::new(default),
    };
    if let (Sub::VerifySuite { only, .. }, Command::VerifySuite(p)) = (&cli.command, &mut cfg.command) {
        if !only.is_empty() {
            p.only = only.clone();
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(fmt) = cli.format {
        cfg.output_format = fmt;
    }
    if let Some(out) = &cli.out {
        cfg.output_path = Some(out.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let cfg = resolve(cli)?;
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {jobs} workers: {e}")))?;
    }
    let outcome = execute(&cfg, cli.deterministic)?;
    match &cfg.output_path {
        Some(path) => fs::write(path, &outcome.body)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?,
        None => {
            let mut stdout = io::stdout().lock();
            if let Err(e) = stdout.write_all(outcome.body.as_bytes()).and_then(|_| stdout.flush()) {
                // a closed pipe (e.g. `| head`) is not an error of the run
                if e.kind() != io::ErrorKind::BrokenPipe {
                    return Err(CliError::config(format!("cannot write output: {e}")));
                }
            }
        }
    }
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("isobound: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
