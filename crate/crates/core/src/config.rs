//! System and solver configuration, plus the `key = value` config file format.
//!
//! A config file is a sequence of `key = value` lines. Blank lines are ignored
//! and `#` starts a comment that runs to the end of the line. The system keys
//! (`lambda`, `p`, `energy_cost`, `gamma`, `eta`, `nu`, `alpha`, `cap_device`,
//! `cap_receiver`) are all required. Solver keys carry a `solver.` prefix and
//! fall back to [`SolverSettings::default`]. Unknown and duplicate keys are
//! rejected with the offending line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parameters of the monitoring link and of the weighted objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Probability that a fresh update arrives at the device in a slot.
    pub lambda: f64,
    /// Probability that a transmission is delivered.
    pub p: f64,
    /// Energy cost of one transmission.
    pub energy_cost: f64,
    pub gamma: f64,
    /// Weight of the CVaR term.
    pub eta: f64,
    /// Weight of the energy term.
    pub nu: f64,
    /// CVaR tail level.
    pub alpha: f64,
    pub cap_device: u32,
    pub cap_receiver: u32,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let finite = [
            ("lambda", self.lambda),
            ("p", self.p),
            ("energy_cost", self.energy_cost),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("nu", self.nu),
            ("alpha", self.alpha),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p must lie in [0, 1], got {}", self.p));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.eta < 0.0 || self.nu < 0.0 || self.energy_cost < 0.0 {
            return bad("eta, nu and energy_cost must be nonnegative".into());
        }
        if self.cap_device < 1 {
            return bad("cap_device must be at least 1".into());
        }
        if self.cap_receiver < self.cap_device {
            return bad(format!(
                "cap_receiver ({}) must be at least cap_device ({})",
                self.cap_receiver, self.cap_device
            ));
        }
        Ok(())
    }

    /// Largest possible stage cost, `(1+η)·Â_r + ν·C`.
    pub fn max_stage_cost(&self) -> f64 {
        (1.0 + self.eta) * f64::from(self.cap_receiver) + self.nu * self.energy_cost
    }

    /// Upper bound on any discounted objective value, `max_stage_cost / (1-γ)`.
    pub fn value_bound(&self) -> f64 {
        self.max_stage_cost() / (1.0 - self.gamma)
    }

    /// Tail bound `γ^H/(1-γ)·max_stage_cost` on truncating the objective at `horizon` slots.
    pub fn truncation_bound(&self, horizon: usize) -> f64 {
        self.gamma.powi(horizon as i32) / (1.0 - self.gamma) * self.max_stage_cost()
    }

    /// Canonical `key = value` rendering; parsing it yields an identical config.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Hex SHA-256 of [`Self::to_config_text`]; identifies the instance a policy was solved for.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_config_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn entries(&self) -> [(&'static str, String); 9] {
        [
            ("lambda", self.lambda.to_string()),
            ("p", self.p.to_string()),
            ("energy_cost", self.energy_cost.to_string()),
            ("gamma", self.gamma.to_string()),
            ("eta", self.eta.to_string()),
            ("nu", self.nu.to_string()),
            ("alpha", self.alpha.to_string()),
            ("cap_device", self.cap_device.to_string()),
            ("cap_receiver", self.cap_receiver.to_string()),
        ]
    }
}

/// How the augmented risk-level dimensions are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Independent geometric grids on `x` and `y`.
    #[serde(rename = "full2d")]
    Full2D,
    /// Geometric grid on `x` along the curve `x·y = x₀·y₀`.
    #[serde(rename = "manifold")]
    Manifold1D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Piecewise linear in `log x` (and `log y` on a full grid).
    LogBilinear,
    #[serde(rename = "nearest")]
    NearestNode,
}

/// Search strategy for the inner envelope maximization on rows with more than
/// two successors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSearch {
    /// Exhaustive scan of a fixed candidate lattice (group masses, then pairs).
    Nested,
    /// Coordinate ascent with compensating redistribution, from three starts.
    CoordinateAscent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Sup-norm change below which value iteration stops.
    pub vi_tolerance: f64,
    pub max_iterations: usize,
    /// Scan resolution for a single envelope weight.
    pub inner_grid_points: usize,
    pub coordinate_ascent_rounds: usize,
    pub interpolation: Interpolation,
    /// Nodes per risk-level dimension.
    pub grid_points: usize,
    pub mode: GridMode,
    pub inner_search: InnerSearch,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            vi_tolerance: 1e-8,
            max_iterations: 10_000,
            inner_grid_points: 129,
            coordinate_ascent_rounds: 8,
            interpolation: Interpolation::LogBilinear,
            grid_points: 65,
            mode: GridMode::Manifold1D,
            inner_search: InnerSearch::Nested,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.vi_tolerance > 0.0 && self.vi_tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "solver.vi_tolerance must be positive, got {}",
                self.vi_tolerance
            )));
        }
        if self.inner_grid_points < 3 {
            return Err(Error::InvalidConfig(
                "solver.inner_grid_points must be at least 3".into(),
            ));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig(
                "solver.grid_points must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "solver.vi_tolerance = {}", self.vi_tolerance);
        let _ = writeln!(out, "solver.max_iterations = {}", self.max_iterations);
        let _ = writeln!(out, "solver.inner_grid_points = {}", self.inner_grid_points);
        let _ = writeln!(
            out,
            "solver.coordinate_ascent_rounds = {}",
            self.coordinate_ascent_rounds
        );
        let interp = match self.interpolation {
            Interpolation::LogBilinear => "log_bilinear",
            Interpolation::NearestNode => "nearest",
        };
        let _ = writeln!(out, "solver.interpolation = {interp}");
        let _ = writeln!(out, "solver.grid_points = {}", self.grid_points);
        let mode = match self.mode {
            GridMode::Full2D => "full2d",
            GridMode::Manifold1D => "manifold",
        };
        let _ = writeln!(out, "solver.mode = {mode}");
        let search = match self.inner_search {
            InnerSearch::Nested => "nested",
            InnerSearch::CoordinateAscent => "coordinate_ascent",
        };
        let _ = writeln!(out, "solver.inner_search = {search}");
        out
    }
}

impl std::str::FromStr for GridMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full2d" => Ok(GridMode::Full2D),
            "manifold" => Ok(GridMode::Manifold1D),
            other => Err(format!(
                "unknown grid mode '{other}' (expected full2d|manifold)"
            )),
        }
    }
}

impl std::str::FromStr for Interpolation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "log_bilinear" => Ok(Interpolation::LogBilinear),
            "nearest" => Ok(Interpolation::NearestNode),
            other => Err(format!(
                "unknown interpolation '{other}' (expected log_bilinear|nearest)"
            )),
        }
    }
}

impl std::str::FromStr for InnerSearch {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nested" => Ok(InnerSearch::Nested),
            "coordinate_ascent" => Ok(InnerSearch::CoordinateAscent),
            other => Err(format!(
                "unknown inner search '{other}' (expected nested|coordinate_ascent)"
            )),
        }
    }
}

/// A parsed config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub system: SystemConfig,
    pub solver: SolverSettings,
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses the `key = value` format described in the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(syntax(
                    line_no,
                    format!("expected 'key = value', got '{line}'"),
                ));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(syntax(line_no, "empty key".into()));
            }
            if value.is_empty() {
                return Err(syntax(line_no, format!("missing value for '{key}'")));
            }
            if !is_known_key(key) {
                return Err(syntax(line_no, format!("unknown key '{key}'")));
            }
            if let Some((first, _)) = seen.get(key) {
                return Err(syntax(
                    line_no,
                    format!("duplicate key '{key}' (first set on line {first})"),
                ));
            }
            seen.insert(key.to_string(), (line_no, value.to_string()));
        }

        let system = SystemConfig {
            lambda: required_f64(&seen, "lambda")?,
            p: required_f64(&seen, "p")?,
            energy_cost: required_f64(&seen, "energy_cost")?,
            gamma: required_f64(&seen, "gamma")?,
            eta: required_f64(&seen, "eta")?,
            nu: required_f64(&seen, "nu")?,
            alpha: required_f64(&seen, "alpha")?,
            cap_device: required_parse(&seen, "cap_device")?,
            cap_receiver: required_parse(&seen, "cap_receiver")?,
        };
        system.validate()?;

        let mut solver = SolverSettings::default();
        if let Some(v) = optional_parse(&seen, "solver.vi_tolerance")? {
            solver.vi_tolerance = v;
        }
        if let Some(v) = optional_parse(&seen, "solver.max_iterations")? {
            solver.max_iterations = v;
        }
        if let Some(v) = optional_parse(&seen, "solver.inner_grid_points")? {
            solver.inner_grid_points = v;
        }
        if let Some(v) = optional_parse(&seen, "solver.coordinate_ascent_rounds")? {
            solver.coordinate_ascent_rounds = v;
        }
        if let Some(v) = optional_parse(&seen, "solver.interpolation")? {
            solver.interpolation = v;
        }
        if let Some(v) = optional_parse(&seen, "solver.grid_points")? {
            solver.grid_points = v;
        }
        if let Some(v) = optional_parse(&seen, "solver.mode")? {
            solver.mode = v;
        }
        if let Some(v) = optional_parse(&seen, "solver.inner_search")? {
            solver.inner_search = v;
        }
        solver.validate()?;

        Ok(Self { system, solver })
    }

    pub fn to_config_text(&self) -> String {
        let mut out = self.system.to_config_text();
        out.push_str(&self.solver.to_config_text());
        out
    }
}

const SYSTEM_KEYS: [&str; 9] = [
    "lambda",
    "p",
    "energy_cost",
    "gamma",
    "eta",
    "nu",
    "alpha",
    "cap_device",
    "cap_receiver",
];

const SOLVER_KEYS: [&str; 8] = [
    "solver.vi_tolerance",
    "solver.max_iterations",
    "solver.inner_grid_points",
    "solver.coordinate_ascent_rounds",
    "solver.interpolation",
    "solver.grid_points",
    "solver.mode",
    "solver.inner_search",
];

fn is_known_key(key: &str) -> bool {
    SYSTEM_KEYS.contains(&key) || SOLVER_KEYS.contains(&key)
}

fn syntax(line: usize, message: String) -> Error {
    Error::ConfigSyntax { line, message }
}

fn required_f64(seen: &BTreeMap<String, (usize, String)>, key: &str) -> Result<f64> {
    required_parse(seen, key)
}

fn required_parse<T>(seen: &BTreeMap<String, (usize, String)>, key: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    match optional_parse(seen, key)? {
        Some(v) => Ok(v),
        None => Err(Error::InvalidConfig(format!(
            "missing required key '{key}'"
        ))),
    }
}

fn optional_parse<T>(seen: &BTreeMap<String, (usize, String)>, key: &str) -> Result<Option<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let Some((line, raw)) = seen.get(key) else {
        return Ok(None);
    };
    raw.parse::<T>()
        .map(Some)
        .map_err(|e| syntax(*line, format!("bad value '{raw}' for '{key}': {e}")))
}
