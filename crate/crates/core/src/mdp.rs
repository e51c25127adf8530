//! Two-age Markov model of the monitoring link.
//!
//! The device holds at most one update; its age `a_d` resets to 1 when a fresh
//! update arrives and otherwise grows by one up to `cap_device`. The receiver age
//! `a_r` becomes `a_d + 1` after a successful transmission and otherwise grows by
//! one, saturating at `cap_receiver`. Reachable states always satisfy `a_r ≥ a_d`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AoiState {
    pub a_d: u32,
    pub a_r: u32,
}

impl AoiState {
    pub const fn new(a_d: u32, a_r: u32) -> Self {
        Self { a_d, a_r }
    }

    pub fn is_valid(&self, cfg: &SystemConfig) -> bool {
        self.a_d >= 1
            && self.a_d <= cfg.cap_device
            && self.a_r >= self.a_d
            && self.a_r <= cfg.cap_receiver
    }

    /// True when the receiver already holds the device's update.
    pub fn is_synced(&self) -> bool {
        self.a_d == self.a_r
    }

    fn check(&self, cfg: &SystemConfig) -> Result<()> {
        if self.is_valid(cfg) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "state {self} outside 1 ≤ a_d ≤ {} , a_d ≤ a_r ≤ {}",
                cfg.cap_device, cfg.cap_receiver
            )))
        }
    }
}

impl fmt::Display for AoiState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.a_d, self.a_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Idle,
    Transmit,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Idle, Action::Transmit];

    pub fn is_transmit(self) -> bool {
        matches!(self, Action::Transmit)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Idle => "idle",
            Action::Transmit => "transmit",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idle" => Ok(Action::Idle),
            "transmit" => Ok(Action::Transmit),
            other => Err(Error::Format(format!("unknown action '{other}'"))),
        }
    }
}

/// Distribution of the next AoI state, one entry per distinct successor,
/// sorted by state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    entries: Vec<(AoiState, f64)>,
}

impl TransitionRow {
    pub fn entries(&self) -> &[(AoiState, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.entries.iter().map(|&(_, p)| p).collect()
    }

    pub fn position(&self, state: AoiState) -> Option<usize> {
        self.entries.iter().position(|&(s, _)| s == state)
    }

    pub fn prob_of(&self, state: AoiState) -> f64 {
        self.position(state).map_or(0.0, |i| self.entries[i].1)
    }

    fn push_merged(&mut self, state: AoiState, prob: f64) {
        if prob <= 0.0 {
            return;
        }
        match self.entries.iter_mut().find(|(s, _)| *s == state) {
            Some(entry) => entry.1 += prob,
            None => self.entries.push((state, prob)),
        }
    }
}

pub fn step_device_age(a_d: u32, arrived: bool, cfg: &SystemConfig) -> Result<u32> {
    if a_d < 1 || a_d > cfg.cap_device {
        return Err(Error::Domain(format!(
            "device age {a_d} outside 1..={}",
            cfg.cap_device
        )));
    }
    Ok(if arrived {
        1
    } else {
        (a_d + 1).min(cfg.cap_device)
    })
}

pub fn step_receiver_age(
    state: AoiState,
    action: Action,
    delivered: bool,
    cfg: &SystemConfig,
) -> Result<u32> {
    if delivered && !action.is_transmit() {
        return Err(Error::Contract("delivery reported for an idle slot".into()));
    }
    state.check(cfg)?;
    let next = if delivered {
        state.a_d + 1
    } else {
        state.a_r + 1
    };
    Ok(next.min(cfg.cap_receiver))
}

/// Full one-slot transition of the AoI state for a realized (arrival, delivery) outcome.
pub fn step_state(
    state: AoiState,
    action: Action,
    arrived: bool,
    delivered: bool,
    cfg: &SystemConfig,
) -> Result<AoiState> {
    Ok(AoiState {
        a_d: step_device_age(state.a_d, arrived, cfg)?,
        a_r: step_receiver_age(state, action, delivered, cfg)?,
    })
}

/// Controlled transition kernel `Pr[· | state, action]`.
pub fn transition_row(
    state: AoiState,
    action: Action,
    cfg: &SystemConfig,
) -> Result<TransitionRow> {
    state.check(cfg)?;
    let lambda = cfg.lambda;
    let d_stay = (state.a_d + 1).min(cfg.cap_device);
    let d_fresh = 1;
    let r_fail = (state.a_r + 1).min(cfg.cap_receiver);
    let r_ok = (state.a_d + 1).min(cfg.cap_receiver);

    let mut row = TransitionRow {
        entries: Vec::with_capacity(4),
    };
    match action {
        Action::Idle => {
            row.push_merged(AoiState::new(d_stay, r_fail), 1.0 - lambda);
            row.push_merged(AoiState::new(d_fresh, r_fail), lambda);
        }
        Action::Transmit => {
            let p = cfg.p;
            row.push_merged(AoiState::new(d_stay, r_ok), (1.0 - lambda) * p);
            row.push_merged(AoiState::new(d_stay, r_fail), (1.0 - lambda) * (1.0 - p));
            row.push_merged(AoiState::new(d_fresh, r_ok), lambda * p);
            row.push_merged(AoiState::new(d_fresh, r_fail), lambda * (1.0 - p));
        }
    }
    row.entries.sort_by_key(|&(s, _)| s);
    Ok(row)
}

pub fn stage_cost(state: AoiState, action: Action, cfg: &SystemConfig) -> f64 {
    let energy = if action.is_transmit() {
        cfg.nu * cfg.energy_cost
    } else {
        0.0
    };
    (1.0 + cfg.eta) * f64::from(state.a_r) + energy
}

/// All valid states in lexicographic `(a_d, a_r)` order.
pub fn enumerate_states(cfg: &SystemConfig) -> Vec<AoiState> {
    (1..=cfg.cap_device)
        .flat_map(|d| (d..=cfg.cap_receiver).map(move |r| AoiState::new(d, r)))
        .collect()
}

/// Dense indexing of the state space in [`enumerate_states`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    states: Vec<AoiState>,
    offsets: Vec<usize>,
    cap_receiver: u32,
}

impl StateSpace {
    pub fn new(cfg: &SystemConfig) -> Self {
        let states = enumerate_states(cfg);
        let mut offsets = Vec::with_capacity(cfg.cap_device as usize);
        let mut acc = 0;
        for d in 1..=cfg.cap_device {
            offsets.push(acc);
            acc += (cfg.cap_receiver - d + 1) as usize;
        }
        Self {
            states,
            offsets,
            cap_receiver: cfg.cap_receiver,
        }
    }

    pub fn states(&self) -> &[AoiState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index(&self, s: AoiState) -> Option<usize> {
        if s.a_d == 0 || s.a_r < s.a_d || s.a_r > self.cap_receiver {
            return None;
        }
        let base = *self.offsets.get(s.a_d as usize - 1)?;
        Some(base + (s.a_r - s.a_d) as usize)
    }
}
