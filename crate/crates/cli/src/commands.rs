//! Execution of resolved commands. Every command writes its manifest first,
//! then its result files, then the manifest again with the finish time.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aoirisk::baseline::risk_neutral_value_iteration;
use aoirisk::export::{load_solution_json, solution_to_json};
use aoirisk::oracle::{enumerate_paths, exact_objective, ExactObjective, MAX_HORIZON};
use aoirisk::runtime::Controller;
use aoirisk::seed::derive_seed;
use aoirisk::sim::{
    empirical_objective_with, simulate_many, BootstrapSettings, EpisodeStats, SimulationSummary,
};
use aoirisk::{value_iteration, AoiState, SolverSettings, SystemConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::manifest::{CommandSpec, RunManifest, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 2,
        }
    }

    fn from_converged(converged: bool) -> Self {
        if converged {
            Outcome::Success
        } else {
            Outcome::NotConverged
        }
    }
}

/// A command together with the configuration snapshot it runs against.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub cfg: SystemConfig,
    pub settings: SolverSettings,
    pub command: CommandSpec,
}

impl Run {
    pub fn from_manifest(m: &RunManifest) -> Self {
        Self {
            cfg: m.config,
            settings: m.settings,
            command: m.command.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn execute(run: &Run, out: &Path) -> Result<Outcome, CliError> {
    run.cfg.validate()?;
    run.settings.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut manifest = RunManifest::new(run.command.clone(), run.cfg, run.settings);
    write_file(out, MANIFEST_FILE, &manifest.to_json()?)?;

    let outcome = match &run.command {
        CommandSpec::Solve => solve(run, out)?,
        CommandSpec::Simulate {
            policy,
            policy_sha256,
            episodes,
            horizon,
            seed,
            episodes_csv,
        } => {
            let text = read_policy(policy, policy_sha256)?;
            let loaded = load_solution_json(&text)?;
            check_hash(&loaded.cfg, &run.cfg)?;
            let (stats, summary) = simulate(&loaded.policy, &run.cfg, *episodes, *horizon, *seed)?;
            write_file(out, "summary.json", &to_json(&summary)?)?;
            if *episodes_csv {
                write_file(out, "episodes.csv", &episodes_table(&stats))?;
            }
            println!(
                "objective {} (95% CI [{}, {}]) over {} episodes",
                summary.objective, summary.ci[0], summary.ci[1], summary.n
            );
            Outcome::Success
        }
        CommandSpec::Evaluate {
            policy,
            policy_sha256,
            horizon,
        } => {
            let text = read_policy(policy, policy_sha256)?;
            let loaded = load_solution_json(&text)?;
            check_hash(&loaded.cfg, &run.cfg)?;
            let start = AoiState::new(1, 1);
            let dist = enumerate_paths(&loaded.policy, &run.cfg, *horizon, start)?;
            let exact = exact_objective(&dist, &run.cfg)?;
            let report = Evaluation {
                horizon: *horizon,
                initial_state: start,
                atoms: dist.atoms.len(),
                truncation_bound: run.cfg.truncation_bound(*horizon),
                exact,
            };
            write_file(out, "evaluation.json", &to_json(&report)?)?;
            write_file(out, "paths.csv", &dist.to_csv())?;
            println!(
                "exact objective {} over {} paths",
                exact.objective, report.atoms
            );
            Outcome::Success
        }
        CommandSpec::Compare {
            episodes,
            horizon,
            seed,
        } => compare(run, out, *episodes, *horizon, *seed)?,
        CommandSpec::Sweep {
            param,
            values,
            episodes,
            horizon,
            seed,
        } => {
            let mut csv = String::from(
                "param,value,mean_aoi,cvar_aoi,mean_energy,objective,ci_low,ci_high,iterations,converged\n",
            );
            let mut all_converged = true;
            for &v in values {
                let cfg = param.apply(&run.cfg, v);
                cfg.validate()
                    .map_err(|e| CliError::Usage(format!("{}={v}: {e}", param.as_str())))?;
                let sol = value_iteration(&cfg, &run.settings)?;
                all_converged &= sol.report.converged;
                let (_, s) = simulate(&sol.policy, &cfg, *episodes, *horizon, *seed)?;
                let _ = writeln!(
                    csv,
                    "{},{v},{},{},{},{},{},{},{},{}",
                    param.as_str(),
                    s.mean_aoi,
                    s.cvar_aoi,
                    s.mean_energy,
                    s.objective,
                    s.ci[0],
                    s.ci[1],
                    sol.report.iterations,
                    sol.report.converged
                );
            }
            write_file(out, "sweep.csv", &csv)?;
            println!("{} sweep points written", values.len());
            Outcome::from_converged(all_converged)
        }
    };

    manifest.mark_finished();
    write_file(out, MANIFEST_FILE, &manifest.to_json()?)?;
    Ok(outcome)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn read_policy(path: &Path, expected_sha: &str) -> Result<String, CliError> {
    let text = read_file(path)?;
    let actual = sha256_hex(text.as_bytes());
    if actual != expected_sha {
        return Err(CliError::Usage(format!(
            "policy file {} changed since the run was recorded (sha256 {actual}, expected {expected_sha})",
            path.display()
        )));
    }
    Ok(text)
}

fn check_hash(policy_cfg: &SystemConfig, cfg: &SystemConfig) -> Result<(), CliError> {
    let (a, b) = (policy_cfg.config_hash(), cfg.config_hash());
    if a != b {
        return Err(CliError::Usage(format!(
            "policy was solved for config hash {a}, but the given config hashes to {b}"
        )));
    }
    Ok(())
}

fn solve(run: &Run, out: &Path) -> Result<Outcome, CliError> {
    let sol = value_iteration(&run.cfg, &run.settings)?;
    write_file(out, "solution.json", &(solution_to_json(&sol)? + "\n"))?;
    write_file(out, "report.json", &to_json(&sol.report)?)?;
    let r = &sol.report;
    if r.converged {
        println!(
            "converged after {} sweeps (residual {:e})",
            r.iterations, r.residual
        );
    } else {
        eprintln!(
            "not converged after {} sweeps (residual {:e} > {:e})",
            r.iterations, r.residual, r.vi_tolerance
        );
    }
    Ok(Outcome::from_converged(r.converged))
}

/// Simulation with the documented seed streams: episode `i` uses
/// `derive_seed(seed, "episodes") + i`, the bootstrap `derive_seed(seed, "bootstrap")`.
pub fn simulate<C: Controller + ?Sized>(
    policy: &C,
    cfg: &SystemConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<(EpisodeStats, SimulationSummary), CliError> {
    let stats = simulate_many(
        policy,
        cfg,
        episodes,
        horizon,
        derive_seed(seed, "episodes"),
    )?;
    let boot = BootstrapSettings {
        resamples: 1000,
        seed: derive_seed(seed, "bootstrap"),
    };
    let est = empirical_objective_with(&stats, cfg, boot)?;
    let mut summary = SimulationSummary::new(&stats, &est);
    summary.seed = seed;
    Ok((stats, summary))
}

fn episodes_table(stats: &EpisodeStats) -> String {
    let mut csv = String::from("episode,seed,discounted_aoi,discounted_energy\n");
    for (i, (a, e)) in stats
        .aoi_samples
        .iter()
        .zip(&stats.energy_samples)
        .enumerate()
    {
        let _ = writeln!(
            csv,
            "{i},{},{a},{e}",
            stats.base_seed.wrapping_add(i as u64)
        );
    }
    csv
}

#[derive(Debug, Serialize, Deserialize)]
struct Evaluation {
    horizon: usize,
    initial_state: AoiState,
    atoms: usize,
    truncation_bound: f64,
    #[serde(flatten)]
    exact: ExactObjective,
}

#[derive(Debug, Serialize, Deserialize)]
struct CompareRow {
    mean_aoi: f64,
    cvar_aoi: f64,
    mean_energy: f64,
    objective: f64,
    ci: [f64; 2],
    std_error: f64,
    solver_iterations: usize,
    converged: bool,
    exact: Option<ExactObjective>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CompareReport {
    n: usize,
    horizon: usize,
    seed: u64,
    risk_aware: CompareRow,
    risk_neutral: CompareRow,
    warning: Option<String>,
}

fn compare(
    run: &Run,
    out: &Path,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Outcome, CliError> {
    let cfg = &run.cfg;
    let aware = value_iteration(cfg, &run.settings)?;
    let neutral = risk_neutral_value_iteration(cfg, &run.settings)?;
    let (_, sa) = simulate(&aware.policy, cfg, episodes, horizon, seed)?;
    let (_, sn) = simulate(&neutral.policy, cfg, episodes, horizon, seed)?;

    let start = AoiState::new(1, 1);
    let (exact_a, exact_n, warning) = if horizon <= MAX_HORIZON {
        let a = exact_objective(&enumerate_paths(&aware.policy, cfg, horizon, start)?, cfg)?;
        let n = exact_objective(&enumerate_paths(&neutral.policy, cfg, horizon, start)?, cfg)?;
        (Some(a), Some(n), None)
    } else {
        let w = format!("exact oracle columns omitted: horizon {horizon} exceeds the enumeration limit {MAX_HORIZON}");
        eprintln!("warning: {w}");
        (None, None, Some(w))
    };
    let row = |s: &SimulationSummary, iterations, converged, exact| CompareRow {
        mean_aoi: s.mean_aoi,
        cvar_aoi: s.cvar_aoi,
        mean_energy: s.mean_energy,
        objective: s.objective,
        ci: s.ci,
        std_error: s.std_error,
        solver_iterations: iterations,
        converged,
        exact,
    };
    let report = CompareReport {
        n: episodes,
        horizon,
        seed,
        risk_aware: row(
            &sa,
            aware.report.iterations,
            aware.report.converged,
            exact_a,
        ),
        risk_neutral: row(&sn, neutral.iterations, neutral.converged, exact_n),
        warning,
    };
    write_file(out, "compare.json", &to_json(&report)?)?;

    let mut csv = String::from(
        "policy,mean_aoi,cvar_aoi,mean_energy,objective,ci_low,ci_high,exact_mean_aoi,exact_cvar_aoi,exact_mean_energy,exact_objective\n",
    );
    for (name, r) in [
        ("risk_aware", &report.risk_aware),
        ("risk_neutral", &report.risk_neutral),
    ] {
        let exact = r
            .exact
            .map(|e| {
                format!(
                    "{},{},{},{}",
                    e.mean_aoi, e.cvar_aoi, e.mean_energy, e.objective
                )
            })
            .unwrap_or_else(|| ",,,".to_string());
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{},{exact}",
            r.mean_aoi, r.cvar_aoi, r.mean_energy, r.objective, r.ci[0], r.ci[1]
        );
    }
    write_file(out, "compare.csv", &csv)?;
    println!(
        "objective: risk-aware {} vs risk-neutral {}",
        report.risk_aware.objective, report.risk_neutral.objective
    );
    Ok(Outcome::from_converged(
        aware.report.converged && neutral.converged,
    ))
}
