//! Classical expected-cost dynamic programming on the AoI state alone.
//!
//! This is the risk-neutral reference the augmented solver is checked against.
//! It shares only the transition kernel with [`crate::solver`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{SolverSettings, SystemConfig};
use crate::error::{Error, Result};
use crate::mdp::{transition_row, Action, AoiState, StateSpace, TransitionRow};

/// Deterministic map from AoI state to action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    actions: BTreeMap<AoiState, Action>,
}

impl StationaryPolicy {
    pub fn new(actions: BTreeMap<AoiState, Action>) -> Self {
        Self { actions }
    }

    pub fn uniform(cfg: &SystemConfig, action: Action) -> Self {
        let space = StateSpace::new(cfg);
        Self {
            actions: space.states().iter().map(|&s| (s, action)).collect(),
        }
    }

    pub fn action(&self, state: AoiState) -> Result<Action> {
        self.actions
            .get(&state)
            .copied()
            .ok_or_else(|| Error::Domain(format!("policy has no action for {state}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (AoiState, Action)> + '_ {
        self.actions.iter().map(|(&s, &a)| (s, a))
    }

    pub fn transmit_count(&self) -> usize {
        self.actions.values().filter(|a| a.is_transmit()).count()
    }
}

#[derive(Debug, Clone)]
pub struct RiskNeutralSolution {
    pub states: Vec<AoiState>,
    pub values: Vec<f64>,
    pub policy: StationaryPolicy,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl RiskNeutralSolution {
    pub fn value(&self, state: AoiState) -> Option<f64> {
        self.states
            .iter()
            .position(|&s| s == state)
            .map(|i| self.values[i])
    }
}

struct Rows {
    states: Vec<AoiState>,
    rows: Vec<[TransitionRow; 2]>,
    space: StateSpace,
}

impl Rows {
    fn new(cfg: &SystemConfig) -> Result<Self> {
        let space = StateSpace::new(cfg);
        let states = space.states().to_vec();
        let rows = states
            .iter()
            .map(|&s| {
                Ok([
                    transition_row(s, Action::Idle, cfg)?,
                    transition_row(s, Action::Transmit, cfg)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            states,
            rows,
            space,
        })
    }

    fn expect(&self, values: &[f64], si: usize, action: Action) -> f64 {
        self.rows[si][action as usize]
            .entries()
            .iter()
            .map(|&(t, p)| p * values[self.space.index(t).expect("closed state space")])
            .sum()
    }
}

/// Value iteration with stage cost `a_r + ν·s·C` from `V ≡ 0`, same stopping
/// rule as the augmented solver. Ties go to Idle.
pub fn risk_neutral_value_iteration(
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> Result<RiskNeutralSolution> {
    cfg.validate()?;
    let rows = Rows::new(cfg)?;
    let n = rows.states.len();
    let mut values = vec![0.0; n];
    let mut actions = vec![Action::Idle; n];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    while iterations < settings.max_iterations {
        let mut next = vec![0.0; n];
        for si in 0..n {
            let s = rows.states[si];
            let mut best = (f64::INFINITY, Action::Idle);
            for a in Action::ALL {
                let energy = if a.is_transmit() {
                    cfg.nu * cfg.energy_cost
                } else {
                    0.0
                };
                let q = f64::from(s.a_r) + energy + cfg.gamma * rows.expect(&values, si, a);
                if q < best.0 {
                    best = (q, a);
                }
            }
            next[si] = best.0;
            actions[si] = best.1;
        }
        residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        iterations += 1;
        if residual <= settings.vi_tolerance {
            converged = true;
            break;
        }
    }
    let policy = StationaryPolicy::new(rows.states.iter().copied().zip(actions).collect());
    Ok(RiskNeutralSolution {
        states: rows.states,
        values,
        policy,
        iterations,
        residual,
        converged,
    })
}

/// Discounted AoI and discounted energy (`Σ γ^t·s_t·C`) of a stationary policy,
/// per state, by iterating the policy's evaluation equations to `tol`.
pub fn evaluate_stationary(
    cfg: &SystemConfig,
    policy: &StationaryPolicy,
    tol: f64,
) -> Result<(Vec<AoiState>, Vec<f64>, Vec<f64>)> {
    let rows = Rows::new(cfg)?;
    let n = rows.states.len();
    let acts: Vec<Action> = rows
        .states
        .iter()
        .map(|&s| policy.action(s))
        .collect::<Result<_>>()?;
    let mut aoi = vec![0.0; n];
    let mut energy = vec![0.0; n];
    loop {
        let mut delta: f64 = 0.0;
        let mut next_aoi = vec![0.0; n];
        let mut next_energy = vec![0.0; n];
        for si in 0..n {
            let a = acts[si];
            next_aoi[si] = f64::from(rows.states[si].a_r) + cfg.gamma * rows.expect(&aoi, si, a);
            let c = if a.is_transmit() {
                cfg.energy_cost
            } else {
                0.0
            };
            next_energy[si] = c + cfg.gamma * rows.expect(&energy, si, a);
            delta = delta
                .max((next_aoi[si] - aoi[si]).abs())
                .max((next_energy[si] - energy[si]).abs());
        }
        aoi = next_aoi;
        energy = next_energy;
        if delta <= tol {
            break;
        }
    }
    Ok((rows.states, aoi, energy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig {
            lambda: 1.0,
            p: 1.0,
            energy_cost: 1.0,
            gamma: 0.5,
            eta: 0.0,
            nu: 0.0,
            alpha: 1.0,
            cap_device: 1,
            cap_receiver: 1,
        }
    }

    #[test]
    fn single_state_geometric_series() {
        let sol = risk_neutral_value_iteration(&cfg(), &SolverSettings::default()).unwrap();
        assert!((sol.value(AoiState::new(1, 1)).unwrap() - 2.0).abs() < 1e-7);
    }

    #[test]
    fn always_transmit_deterministic_link() {
        // Ages 1,2,2,2,… → 1 + 2·γ/(1-γ) = 3 at γ = 0.5.
        let mut c = cfg();
        c.cap_device = 3;
        c.cap_receiver = 3;
        let policy = StationaryPolicy::uniform(&c, Action::Transmit);
        let (states, aoi, energy) = evaluate_stationary(&c, &policy, 1e-13).unwrap();
        let i = states
            .iter()
            .position(|&s| s == AoiState::new(1, 1))
            .unwrap();
        assert!((aoi[i] - 3.0).abs() < 1e-10);
        assert!((energy[i] - 2.0).abs() < 1e-10);
    }
}
