//! Command-line workflows for the `aoirisk` solver: solve, simulate, evaluate,
//! compare, sweep, and rerun from a manifest.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when value
//! iteration stopped at `max_iterations` without converging.

pub mod commands;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use aoirisk::runtime::default_horizon;
use aoirisk::{ConfigFile, GridMode, SolverSettings, SystemConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{execute, Outcome, Run};
pub use error::CliError;
pub use manifest::{CommandSpec, RunManifest, SweepParam, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "aoirisk",
    version,
    about = "Risk-aware status-update scheduling: solve, simulate, compare"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Commands,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Full2d,
    Manifold,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Risk-grid nodes per dimension (overrides solver.grid_points).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Risk-grid layout (overrides solver.mode).
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,
    /// Slots per episode; defaults to the smallest H with γ^H ≤ 1e-3.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Commands {
    /// Solve the risk-aware MDP and write the value table, policy and report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Monte Carlo estimate of a solved policy's objective.
    Simulate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Also write per-episode discounted totals.
        #[arg(long)]
        episodes_csv: bool,
    },
    /// Exact finite-horizon objective of a solved policy by path enumeration.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        horizon: usize,
    },
    /// Risk-aware against risk-neutral policy on common random numbers.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Solve and simulate once per value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One of eta, alpha, nu, lambda, p.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Re-execute the command recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(
    path: &Path,
    solver: Option<&SolverArgs>,
) -> Result<(SystemConfig, SolverSettings), CliError> {
    let file =
        ConfigFile::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut settings = file.solver;
    if let Some(args) = solver {
        if let Some(n) = args.grid {
            settings.grid_points = n;
        }
        if let Some(mode) = args.mode {
            settings.mode = match mode {
                ModeArg::Full2d => GridMode::Full2D,
                ModeArg::Manifold => GridMode::Manifold1D,
            };
        }
    }
    settings.validate()?;
    Ok((file.system, settings))
}

fn policy_ref(path: &Path) -> Result<(PathBuf, String), CliError> {
    let abs = fs::canonicalize(path).map_err(|e| CliError::io(path, e))?;
    let bytes = fs::read(&abs).map_err(|e| CliError::io(&abs, e))?;
    Ok((abs, commands::sha256_hex(&bytes)))
}

fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("sweep value `{s}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("empty sweep value list".into()));
    }
    Ok(values)
}

fn horizon_or_default(h: Option<usize>, cfg: &SystemConfig) -> usize {
    h.unwrap_or_else(|| default_horizon(cfg))
}

fn check_counts(episodes: usize, horizon: usize) -> Result<(), CliError> {
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(CliError::Usage("--horizon must be at least 1".into()));
    }
    Ok(())
}

/// Turns parsed arguments into a resolved run and its output directory.
pub fn resolve(cli: Cli) -> Result<(Run, PathBuf), CliError> {
    match cli.command {
        Commands::Solve {
            config,
            out,
            solver,
        } => {
            let (cfg, settings) = load_config(&config, Some(&solver))?;
            Ok((
                Run {
                    cfg,
                    settings,
                    command: CommandSpec::Solve,
                },
                out,
            ))
        }
        Commands::Simulate {
            policy,
            config,
            out,
            sim,
            episodes_csv,
        } => {
            let (cfg, settings) = load_config(&config, None)?;
            let horizon = horizon_or_default(sim.horizon, &cfg);
            check_counts(sim.episodes, horizon)?;
            let (policy, policy_sha256) = policy_ref(&policy)?;
            Ok((
                Run {
                    cfg,
                    settings,
                    command: CommandSpec::Simulate {
                        policy,
                        policy_sha256,
                        episodes: sim.episodes,
                        horizon,
                        seed: sim.seed,
                        episodes_csv,
                    },
                },
                out,
            ))
        }
        Commands::Evaluate {
            policy,
            config,
            out,
            horizon,
        } => {
            let (cfg, settings) = load_config(&config, None)?;
            check_counts(1, horizon)?;
            let (policy, policy_sha256) = policy_ref(&policy)?;
            Ok((
                Run {
                    cfg,
                    settings,
                    command: CommandSpec::Evaluate {
                        policy,
                        policy_sha256,
                        horizon,
                    },
                },
                out,
            ))
        }
        Commands::Compare {
            config,
            out,
            solver,
            sim,
        } => {
            let (cfg, settings) = load_config(&config, Some(&solver))?;
            let horizon = horizon_or_default(sim.horizon, &cfg);
            check_counts(sim.episodes, horizon)?;
            Ok((
                Run {
                    cfg,
                    settings,
                    command: CommandSpec::Compare {
                        episodes: sim.episodes,
                        horizon,
                        seed: sim.seed,
                    },
                },
                out,
            ))
        }
        Commands::Sweep {
            config,
            out,
            param,
            values,
            solver,
            sim,
        } => {
            let param = SweepParam::parse(&param)?;
            let values = parse_values(&values)?;
            let (cfg, settings) = load_config(&config, Some(&solver))?;
            let horizon = horizon_or_default(sim.horizon, &cfg);
            check_counts(sim.episodes, horizon)?;
            Ok((
                Run {
                    cfg,
                    settings,
                    command: CommandSpec::Sweep {
                        param,
                        values,
                        episodes: sim.episodes,
                        horizon,
                        seed: sim.seed,
                    },
                },
                out,
            ))
        }
        Commands::Rerun { manifest, out } => {
            let text = fs::read_to_string(&manifest).map_err(|e| CliError::io(&manifest, e))?;
            let m = RunManifest::parse(&text)?;
            let out = match out {
                Some(o) => o,
                None => manifest
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from(".")),
            };
            Ok((Run::from_manifest(&m), out))
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match resolve(cli).and_then(|(run, out)| execute(&run, &out)) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
