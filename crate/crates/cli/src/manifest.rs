//! Run manifests: everything needed to re-execute a command bit-exactly.
//!
//! A manifest is written to the output directory before any result file and
//! rewritten with the finish time once the run completes. Result files never
//! contain timestamps, so re-running a manifest reproduces them byte for byte.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use aoirisk::seed::derive_seed;
use aoirisk::{SolverSettings, SystemConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_NAME: &str = "aoirisk";

/// Per-component seed streams derived from the base seed.
pub const SEED_COMPONENTS: [&str; 2] = ["episodes", "bootstrap"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Eta,
    Alpha,
    Nu,
    Lambda,
    P,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Eta => "eta",
            SweepParam::Alpha => "alpha",
            SweepParam::Nu => "nu",
            SweepParam::Lambda => "lambda",
            SweepParam::P => "p",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "eta" => Ok(SweepParam::Eta),
            "alpha" => Ok(SweepParam::Alpha),
            "nu" => Ok(SweepParam::Nu),
            "lambda" => Ok(SweepParam::Lambda),
            "p" => Ok(SweepParam::P),
            other => Err(CliError::Usage(format!(
                "unknown sweep parameter `{other}` (expected eta, alpha, nu, lambda or p)"
            ))),
        }
    }

    pub fn apply(self, cfg: &SystemConfig, value: f64) -> SystemConfig {
        let mut c = *cfg;
        match self {
            SweepParam::Eta => c.eta = value,
            SweepParam::Alpha => c.alpha = value,
            SweepParam::Nu => c.nu = value,
            SweepParam::Lambda => c.lambda = value,
            SweepParam::P => c.p = value,
        }
        c
    }
}

/// A fully resolved command: defaults filled in, paths absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommandSpec {
    Solve,
    Simulate {
        policy: PathBuf,
        policy_sha256: String,
        episodes: usize,
        horizon: usize,
        seed: u64,
        episodes_csv: bool,
    },
    Evaluate {
        policy: PathBuf,
        policy_sha256: String,
        horizon: usize,
    },
    Compare {
        episodes: usize,
        horizon: usize,
        seed: u64,
    },
    Sweep {
        param: SweepParam,
        values: Vec<f64>,
        episodes: usize,
        horizon: usize,
        seed: u64,
    },
}

impl CommandSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CommandSpec::Solve => "solve",
            CommandSpec::Simulate { .. } => "simulate",
            CommandSpec::Evaluate { .. } => "evaluate",
            CommandSpec::Compare { .. } => "compare",
            CommandSpec::Sweep { .. } => "sweep",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            CommandSpec::Simulate { seed, .. }
            | CommandSpec::Compare { seed, .. }
            | CommandSpec::Sweep { seed, .. } => Some(*seed),
            CommandSpec::Solve | CommandSpec::Evaluate { .. } => None,
        }
    }

    /// Result files this command writes, in the order it writes them.
    pub fn outputs(&self) -> Vec<String> {
        let names: &[&str] = match self {
            CommandSpec::Solve => &["solution.json", "report.json"],
            CommandSpec::Simulate {
                episodes_csv: true, ..
            } => &["summary.json", "episodes.csv"],
            CommandSpec::Simulate { .. } => &["summary.json"],
            CommandSpec::Evaluate { .. } => &["evaluation.json", "paths.csv"],
            CommandSpec::Compare { .. } => &["compare.json", "compare.csv"],
            CommandSpec::Sweep { .. } => &["sweep.csv"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        match self {
            CommandSpec::Solve => Ok(()),
            CommandSpec::Simulate {
                episodes, horizon, ..
            }
            | CommandSpec::Compare {
                episodes, horizon, ..
            }
            | CommandSpec::Sweep {
                episodes, horizon, ..
            } if *episodes == 0 || *horizon == 0 => {
                usage("episodes and horizon must be at least 1")
            }
            CommandSpec::Evaluate { horizon: 0, .. } => usage("horizon must be at least 1"),
            CommandSpec::Sweep { values, .. } if values.is_empty() => {
                usage("empty sweep value list")
            }
            CommandSpec::Sweep { values, .. } if values.iter().any(|v| !v.is_finite()) => {
                usage("sweep values must be finite")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: CommandSpec,
    pub config: SystemConfig,
    pub config_hash: String,
    pub settings: SolverSettings,
    /// Base seed and every derived stream, keyed by component name.
    pub seeds: BTreeMap<String, u64>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: CommandSpec, config: SystemConfig, settings: SolverSettings) -> Self {
        let mut seeds = BTreeMap::new();
        if let Some(base) = command.seed() {
            seeds.insert("base".to_string(), base);
            for c in SEED_COMPONENTS {
                seeds.insert(c.to_string(), derive_seed(base, c));
            }
        }
        Self {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: command.outputs(),
            command,
            config_hash: config.config_hash(),
            config,
            settings,
            seeds,
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
        }
    }

    pub fn mark_finished(&mut self) {
        self.finished_unix_ms = Some(now_ms());
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates a manifest.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let m: RunManifest = serde_json::from_str(text)?;
        if m.tool != TOOL_NAME {
            return Err(CliError::Usage(format!(
                "manifest written by `{}`, not {TOOL_NAME}",
                m.tool
            )));
        }
        m.config.validate()?;
        m.settings.validate()?;
        if m.config_hash != m.config.config_hash() {
            return Err(CliError::Usage(
                "manifest config_hash does not match its config".into(),
            ));
        }
        m.command.validate()?;
        if let Some(base) = m.command.seed() {
            for c in SEED_COMPONENTS {
                if m.seeds.get(c) != Some(&derive_seed(base, c)) {
                    return Err(CliError::Usage(format!(
                        "manifest seed `{c}` does not derive from base {base}"
                    )));
                }
            }
        }
        Ok(m)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig {
            lambda: 0.5,
            p: 0.7,
            energy_cost: 1.0,
            gamma: 0.9,
            eta: 1.0,
            nu: 0.1,
            alpha: 0.3,
            cap_device: 3,
            cap_receiver: 3,
        }
    }

    #[test]
    fn roundtrip() {
        let cmd = CommandSpec::Sweep {
            param: SweepParam::Eta,
            values: vec![0.0, 0.1, 4.0],
            episodes: 10,
            horizon: 20,
            seed: 7,
        };
        let m = RunManifest::new(cmd, cfg(), SolverSettings::default());
        let back = RunManifest::parse(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seeds["episodes"], derive_seed(7, "episodes"));
    }

    #[test]
    fn tampered_config_rejected() {
        let m = RunManifest::new(CommandSpec::Solve, cfg(), SolverSettings::default());
        let text = m.to_json().unwrap().replace("\"eta\": 1.0", "\"eta\": 2.0");
        assert!(RunManifest::parse(&text).is_err());
    }

    #[test]
    fn unknown_param_rejected() {
        assert!(SweepParam::parse("gamma").is_err());
        assert_eq!(SweepParam::parse("alpha").unwrap(), SweepParam::Alpha);
    }
}
