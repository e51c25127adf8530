//! Executing policies: the history-dependent policy reconstructed from an
//! [`AugmentedPolicy`], and plain [`StationaryPolicy`] maps, behind one
//! [`Controller`] interface.
//!
//! The reconstructed policy carries the risk levels `(x_t, y_t)` as its memory.
//! After the successor `A_{t+1}` is realized, the levels move to
//! `(x_t/ξ, y_t·ξ)` where `ξ` is the stored envelope weight of that successor,
//! so `x_t·y_t` never changes.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::StationaryPolicy;
use crate::config::{GridMode, SystemConfig};
use crate::error::{Error, Result};
use crate::mdp::{step_state, transition_row, Action, AoiState};
use crate::risk::{mixture_risk_levels, EnvelopeWeights, RiskLevels, ENVELOPE_TOL};
use crate::solver::AugmentedPolicy;

/// Action chosen at one slot, with the envelope weights used to move the levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// `None` for policies that do not track risk levels.
    pub xi: Option<EnvelopeWeights>,
}

pub trait Controller {
    fn start_levels(&self) -> RiskLevels;
    fn decide(&self, aoi: AoiState, levels: RiskLevels) -> Result<Decision>;
}

impl Controller for StationaryPolicy {
    fn start_levels(&self) -> RiskLevels {
        RiskLevels::NEUTRAL
    }

    fn decide(&self, aoi: AoiState, _levels: RiskLevels) -> Result<Decision> {
        Ok(Decision {
            action: self.action(aoi)?,
            xi: None,
        })
    }
}

impl Controller for AugmentedPolicy {
    fn start_levels(&self) -> RiskLevels {
        self.initial_levels()
    }

    fn decide(&self, aoi: AoiState, levels: RiskLevels) -> Result<Decision> {
        let (action, xi) = act(
            self,
            &RuntimeState {
                aoi,
                levels,
                slot: 0,
            },
        )?;
        Ok(Decision {
            action,
            xi: Some(xi),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeState {
    pub aoi: AoiState,
    pub levels: RiskLevels,
    pub slot: usize,
}

pub fn initial_levels(cfg: &SystemConfig) -> RiskLevels {
    mixture_risk_levels(cfg.eta, cfg.alpha)
}

/// `(x/ξ, y·ξ)`; `ξ` must lie in `[x, 1/y]`.
pub fn advance_levels(levels: RiskLevels, xi_realized: f64) -> Result<RiskLevels> {
    let tol = ENVELOPE_TOL;
    if !(xi_realized >= levels.lower() - tol && xi_realized <= levels.upper() + tol) {
        return Err(Error::Contract(format!(
            "ξ = {xi_realized} outside [{}, {}]",
            levels.lower(),
            levels.upper()
        )));
    }
    Ok(RiskLevels {
        x: (levels.x / xi_realized).min(1.0),
        y: (levels.y * xi_realized).min(1.0),
    })
}

/// Looks up the stationary action and envelope weights for `state`.
///
/// Levels between grid nodes resolve to the nearest node in log-distance.
pub fn act(policy: &AugmentedPolicy, state: &RuntimeState) -> Result<(Action, EnvelopeWeights)> {
    let si = policy
        .space()
        .index(state.aoi)
        .ok_or_else(|| Error::Domain(format!("AoI state {} not covered by policy", state.aoi)))?;
    let grid = policy.grid();
    let lv = state.levels;
    if !(lv.x > 0.0 && lv.x <= 1.0 && lv.y > 0.0 && lv.y <= 1.0) {
        return Err(Error::Domain(format!(
            "levels ({}, {}) outside (0,1]²",
            lv.x, lv.y
        )));
    }
    if grid.mode() == GridMode::Manifold1D {
        let c = grid.manifold_constant();
        if (lv.x * lv.y - c).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "levels ({}, {}) off the x·y = {c} manifold",
                lv.x, lv.y
            )));
        }
    }
    let node = grid.nearest_node(lv);
    Ok((policy.action_at(si, node), policy.xi_at(si, node).clone()))
}

/// Levels after the realized successor `successor` of the decision's row.
///
/// The stored weight comes from the nearest grid node, so it is clamped to the
/// envelope of the actual levels before being applied.
pub(crate) fn next_levels(
    levels: RiskLevels,
    decision: &Decision,
    successor: usize,
) -> Result<(RiskLevels, f64)> {
    match &decision.xi {
        None => Ok((levels, 1.0)),
        Some(xi) => {
            let w = *xi.weights.get(successor).ok_or_else(|| {
                Error::Contract(format!(
                    "envelope weights of length {} have no successor {successor}",
                    xi.len()
                ))
            })?;
            let w = w.clamp(levels.lower(), levels.upper());
            Ok((advance_levels(levels, w)?, w))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub slot: usize,
    pub aoi: AoiState,
    pub levels: RiskLevels,
    pub action: Action,
    pub arrival: bool,
    pub delivery: bool,
    /// Envelope weight applied after this slot (1 for level-free policies).
    pub xi_realized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub steps: Vec<EpisodeStep>,
    pub discounted_aoi: f64,
    pub discounted_energy: f64,
}

impl EpisodeRecord {
    /// One row per slot: `slot,a_d,a_r,x,y,action,arrival,delivery`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot,a_d,a_r,x,y,action,arrival,delivery\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.slot,
                s.aoi.a_d,
                s.aoi.a_r,
                s.levels.x,
                s.levels.y,
                s.action,
                u8::from(s.arrival),
                u8::from(s.delivery)
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Discounted totals of one episode without the per-slot trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EpisodeTotals {
    pub aoi: f64,
    pub energy: f64,
}

pub(crate) fn run_episode<C: Controller + ?Sized>(
    controller: &C,
    cfg: &SystemConfig,
    start: AoiState,
    horizon: usize,
    seed: u64,
    mut trace: Option<&mut Vec<EpisodeStep>>,
) -> Result<EpisodeTotals> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aoi = start;
    let mut levels = controller.start_levels();
    let mut discount = 1.0;
    let mut totals = EpisodeTotals {
        aoi: 0.0,
        energy: 0.0,
    };
    for slot in 0..horizon {
        let decision = controller.decide(aoi, levels)?;
        // Both draws every slot so different policies see common random numbers.
        let arrival = rng.random::<f64>() < cfg.lambda;
        let delivery_draw = rng.random::<f64>() < cfg.p;
        let delivery = decision.action.is_transmit() && delivery_draw;

        totals.aoi += discount * f64::from(aoi.a_r);
        if decision.action.is_transmit() {
            totals.energy += discount * cfg.energy_cost;
        }

        let next = step_state(aoi, decision.action, arrival, delivery, cfg)?;
        let row = transition_row(aoi, decision.action, cfg)?;
        let successor = row.position(next).ok_or_else(|| {
            Error::Contract(format!("sampled successor {next} missing from kernel row"))
        })?;
        let (new_levels, xi_realized) = next_levels(levels, &decision, successor)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(EpisodeStep {
                slot,
                aoi,
                levels,
                action: decision.action,
                arrival,
                delivery,
                xi_realized,
            });
        }
        aoi = next;
        levels = new_levels;
        discount *= cfg.gamma;
    }
    Ok(totals)
}

/// Simulates `horizon` slots from AoI state `(1,1)` with a seeded generator.
pub fn rollout<C: Controller + ?Sized>(
    policy: &C,
    cfg: &SystemConfig,
    horizon: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    rollout_from(policy, cfg, AoiState::new(1, 1), horizon, seed)
}

pub fn rollout_from<C: Controller + ?Sized>(
    policy: &C,
    cfg: &SystemConfig,
    start: AoiState,
    horizon: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    if horizon < 1 {
        return Err(Error::Domain("rollout horizon must be at least 1".into()));
    }
    if !start.is_valid(cfg) {
        return Err(Error::Domain(format!("start state {start} invalid")));
    }
    let mut steps = Vec::with_capacity(horizon);
    let totals = run_episode(policy, cfg, start, horizon, seed, Some(&mut steps))?;
    Ok(EpisodeRecord {
        steps,
        discounted_aoi: totals.aoi,
        discounted_energy: totals.energy,
    })
}

/// Smallest horizon whose truncation error is at most `1e-3` of the objective scale
/// `max_stage_cost/(1-γ)`, i.e. `γ^H ≤ 1e-3`.
pub fn default_horizon(cfg: &SystemConfig) -> usize {
    ((1e-3f64).ln() / cfg.gamma.ln()).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det_cfg() -> SystemConfig {
        SystemConfig {
            lambda: 1.0,
            p: 1.0,
            energy_cost: 1.0,
            gamma: 0.5,
            eta: 0.0,
            nu: 5.0,
            alpha: 1.0,
            cap_device: 3,
            cap_receiver: 3,
        }
    }

    #[test]
    fn initial_levels_examples() {
        let mut c = det_cfg();
        assert_eq!(initial_levels(&c), RiskLevels::NEUTRAL);
        c.eta = 1.0;
        c.alpha = 0.1;
        let l = initial_levels(&c);
        assert!((l.x - 0.5).abs() < 1e-15 && (l.y - 2.0 / 11.0).abs() < 1e-15);
        c.eta = 3.0;
        c.alpha = 1.0;
        let l = initial_levels(&c);
        assert!((l.x - 0.25).abs() < 1e-15 && (l.y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn advance_levels_examples() {
        let l = RiskLevels::new(0.5, 0.4).unwrap();
        assert_eq!(advance_levels(l, 1.0).unwrap(), l);
        let a = advance_levels(l, 1.25).unwrap();
        assert!((a.x - 0.4).abs() < 1e-15 && (a.y - 0.5).abs() < 1e-15);
        let b = advance_levels(l, 0.8).unwrap();
        assert!((b.x - 0.625).abs() < 1e-15 && (b.y - 0.32).abs() < 1e-15);
        assert!(matches!(advance_levels(l, 0.3), Err(Error::Contract(_))));
        assert!(matches!(advance_levels(l, 2.6), Err(Error::Contract(_))));
    }

    #[test]
    fn deterministic_always_transmit_rollout() {
        let c = det_cfg();
        let policy = StationaryPolicy::uniform(&c, Action::Transmit);
        let rec = rollout(&policy, &c, 8, 7).unwrap();
        let ages: Vec<u32> = rec.steps.iter().map(|s| s.aoi.a_r).collect();
        assert_eq!(ages, vec![1, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(rec.discounted_aoi, 2.984375);
        assert_eq!(rec.discounted_energy, 1.9921875);
    }

    #[test]
    fn same_seed_same_record() {
        let mut c = det_cfg();
        c.lambda = 0.4;
        c.p = 0.6;
        let policy = StationaryPolicy::uniform(&c, Action::Transmit);
        let a = rollout(&policy, &c, 50, 11).unwrap();
        let b = rollout(&policy, &c, 50, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        let other = rollout(&policy, &c, 50, 12).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn discounted_sums_match_trace() {
        let mut c = det_cfg();
        c.lambda = 0.3;
        c.p = 0.5;
        c.energy_cost = 2.0;
        let policy = StationaryPolicy::uniform(&c, Action::Transmit);
        let rec = rollout(&policy, &c, 40, 3).unwrap();
        let (mut aoi, mut energy) = (0.0, 0.0);
        for s in &rec.steps {
            let d = c.gamma.powi(s.slot as i32);
            aoi += d * f64::from(s.aoi.a_r);
            if s.action.is_transmit() {
                energy += d * c.energy_cost;
            }
        }
        assert!((aoi - rec.discounted_aoi).abs() < 1e-9);
        assert!((energy - rec.discounted_energy).abs() < 1e-9);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let c = det_cfg();
        let policy = StationaryPolicy::uniform(&c, Action::Idle);
        let csv = rollout(&policy, &c, 3, 1).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "slot,a_d,a_r,x,y,action,arrival,delivery");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,1,1,1,1,idle,1,0");
    }

    #[test]
    fn zero_horizon_rejected() {
        let c = det_cfg();
        let policy = StationaryPolicy::uniform(&c, Action::Idle);
        assert!(rollout(&policy, &c, 0, 1).is_err());
    }
}
