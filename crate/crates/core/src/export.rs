//! JSON export of a solved value table and policy, and the loader that turns
//! such a file back into a runnable [`AugmentedPolicy`].
//!
//! ```text
//! {"config": {...}, "config_hash": "...", "settings": {...},
//!  "initial_levels": {"x": .., "y": ..},
//!  "grid": {"mode": "manifold"|"full2d", "xs": [..], "ys": [..]},
//!  "states": [{"a_d": .., "a_r": .., "nodes": [{"x", "y", "value", "action", "xi": [..]}]}],
//!  "report": {...}}
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{GridMode, SolverSettings, SystemConfig};
use crate::error::{Error, Result};
use crate::grid::RiskGrid;
use crate::mdp::{transition_row, Action, StateSpace};
use crate::risk::{envelope_feasible, EnvelopeWeights, RiskLevels, ENVELOPE_TOL};
use crate::solver::{AugmentedPolicy, ConvergenceReport, Solution, ValueTable};

/// Node coordinates in the file may differ from the rebuilt grid by this much.
const COORD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub mode: GridMode,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub action: Action,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEntry {
    pub a_d: u32,
    pub a_r: u32,
    pub nodes: Vec<NodeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub config: SystemConfig,
    pub config_hash: String,
    pub settings: SolverSettings,
    pub initial_levels: RiskLevels,
    pub grid: GridAxes,
    pub states: Vec<StateEntry>,
    pub report: ConvergenceReport,
}

impl SolutionFile {
    pub fn from_solution(sol: &Solution) -> Self {
        let grid = sol.table.grid();
        let space = sol.table.space();
        let states = space
            .states()
            .iter()
            .enumerate()
            .map(|(si, s)| StateEntry {
                a_d: s.a_d,
                a_r: s.a_r,
                nodes: (0..grid.len())
                    .map(|k| {
                        let l = grid.node(k);
                        NodeEntry {
                            x: l.x,
                            y: l.y,
                            value: sol.table.state_values(si)[k],
                            action: sol.policy.action_at(si, k),
                            xi: sol.policy.xi_at(si, k).weights.clone(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Self {
            config: sol.cfg,
            config_hash: sol.cfg.config_hash(),
            settings: sol.settings,
            initial_levels: sol.initial_levels,
            grid: GridAxes {
                mode: grid.mode(),
                xs: grid.xs().to_vec(),
                ys: grid.ys().to_vec(),
            },
            states,
            report: sol.report.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn solution_to_json(sol: &Solution) -> Result<String> {
    SolutionFile::from_solution(sol).to_json()
}

/// A solution file after validation.
#[derive(Debug, Clone)]
pub struct LoadedSolution {
    pub cfg: SystemConfig,
    pub settings: SolverSettings,
    pub table: ValueTable,
    pub policy: AugmentedPolicy,
    pub report: ConvergenceReport,
}

/// Parses and validates a solution file: config hash, grid invariants, state
/// order, node coordinates, and feasibility of every stored weight vector.
pub fn load_solution_json(text: &str) -> Result<LoadedSolution> {
    let file: SolutionFile = serde_json::from_str(text)?;
    let bad = |m: String| Err(Error::Format(m));
    let cfg = file.config;
    cfg.validate()?;
    file.settings.validate()?;
    if file.config_hash != cfg.config_hash() {
        return bad("config_hash does not match the embedded config".into());
    }
    let grid = RiskGrid::from_axes(file.grid.mode, file.grid.xs, file.grid.ys)?;
    let init = RiskLevels::new(file.initial_levels.x, file.initial_levels.y)
        .map_err(|e| Error::Format(format!("initial_levels: {e}")))?;
    if grid.find_node(init).is_none() {
        return bad("initial_levels are not a grid node".into());
    }
    let space = StateSpace::new(&cfg);
    if file.states.len() != space.len() {
        return bad(format!(
            "{} state entries, expected {}",
            file.states.len(),
            space.len()
        ));
    }
    let n = grid.len();
    let mut values = Vec::with_capacity(n * space.len());
    let mut actions = Vec::with_capacity(n * space.len());
    let mut xi = Vec::with_capacity(n * space.len());
    for (entry, &state) in file.states.iter().zip(space.states()) {
        if (entry.a_d, entry.a_r) != (state.a_d, state.a_r) {
            return bad(format!(
                "state entry ({},{}) out of order, expected {state}",
                entry.a_d, entry.a_r
            ));
        }
        if entry.nodes.len() != n {
            return bad(format!(
                "state {state} has {} nodes, expected {n}",
                entry.nodes.len()
            ));
        }
        for (k, node) in entry.nodes.iter().enumerate() {
            let l = grid.node(k);
            if (node.x - l.x).abs() > COORD_TOL || (node.y - l.y).abs() > COORD_TOL {
                return bad(format!("state {state} node {k} coordinates off the grid"));
            }
            if !node.value.is_finite() {
                return bad(format!("state {state} node {k} value not finite"));
            }
            let row = transition_row(state, node.action, &cfg)?;
            let w = EnvelopeWeights::from(node.xi.clone());
            if w.len() != row.len() || !envelope_feasible(&w, &row.probs(), l, ENVELOPE_TOL) {
                return bad(format!("state {state} node {k} weights infeasible"));
            }
            values.push(node.value);
            actions.push(node.action);
            xi.push(w);
        }
    }
    let grid = Arc::new(grid);
    let space = Arc::new(space);
    let table = ValueTable::from_values(grid.clone(), space.clone(), values)?;
    let policy = AugmentedPolicy::new(cfg, grid, space, init, actions, xi)?;
    Ok(LoadedSolution {
        cfg,
        settings: file.settings,
        table,
        policy,
        report: file.report,
    })
}

pub fn load_policy_json(text: &str) -> Result<AugmentedPolicy> {
    Ok(load_solution_json(text)?.policy)
}
