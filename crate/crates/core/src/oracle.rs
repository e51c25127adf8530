//! Exact finite-horizon evaluation by enumerating every random path.
//!
//! Only usable on tiny instances: the number of paths grows like `4^H`.

use serde::{Deserialize, Serialize};

use crate::baseline::StationaryPolicy;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::mdp::{transition_row, Action, AoiState, StateSpace};
use crate::risk::{qscan_sorted, RiskLevels};
use crate::runtime::{next_levels, Controller};

pub const MAX_HORIZON: usize = 10;
pub const MAX_POLICY_STATES: usize = 8;

/// Values closer than this are merged into one atom of the AoI law.
const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathAtom {
    pub aoi: f64,
    pub energy: f64,
    pub prob: f64,
}

/// Joint law of (discounted AoI, discounted energy) over all horizon-`H` paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDistribution {
    pub atoms: Vec<PathAtom>,
}

impl PathDistribution {
    pub fn total_prob(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    pub fn mean_aoi(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.aoi).sum()
    }

    pub fn mean_energy(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.energy).sum()
    }

    /// Marginal law of the discounted AoI, ascending, near-equal values merged.
    pub fn aoi_marginal(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = self.atoms.iter().map(|a| (a.aoi, a.prob)).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            match merged.last_mut() {
                Some(last) if v - last.0 <= MERGE_TOL => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        merged
    }

    pub fn cvar_aoi(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Domain(format!("CVaR level {alpha} outside (0,1]")));
        }
        if alpha == 1.0 {
            return Ok(self.mean_aoi());
        }
        Ok(qscan_sorted(&self.aoi_marginal(), alpha))
    }

    /// `aoi,energy,prob` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("aoi,energy,prob\n");
        for a in &self.atoms {
            out.push_str(&format!("{},{},{}\n", a.aoi, a.energy, a.prob));
        }
        out
    }
}

/// Enumerates every path of length `horizon` from `initial`, following the
/// controller's actions and envelope-weight level updates.
pub fn enumerate_paths<C: Controller + ?Sized>(
    controller: &C,
    cfg: &SystemConfig,
    horizon: usize,
    initial: AoiState,
) -> Result<PathDistribution> {
    cfg.validate()?;
    if horizon > MAX_HORIZON {
        return Err(Error::Guard(format!(
            "horizon {horizon} exceeds the enumeration limit {MAX_HORIZON}"
        )));
    }
    if !initial.is_valid(cfg) {
        return Err(Error::Domain(format!("initial state {initial} invalid")));
    }
    let mut atoms = Vec::new();
    let start = Node {
        state: initial,
        levels: controller.start_levels(),
        prob: 1.0,
        aoi: 0.0,
        energy: 0.0,
        discount: 1.0,
    };
    walk(controller, cfg, start, horizon, &mut atoms)?;
    Ok(PathDistribution { atoms })
}

struct Node {
    state: AoiState,
    levels: RiskLevels,
    prob: f64,
    aoi: f64,
    energy: f64,
    discount: f64,
}

fn walk<C: Controller + ?Sized>(
    controller: &C,
    cfg: &SystemConfig,
    node: Node,
    remaining: usize,
    out: &mut Vec<PathAtom>,
) -> Result<()> {
    if remaining == 0 {
        out.push(PathAtom {
            aoi: node.aoi,
            energy: node.energy,
            prob: node.prob,
        });
        return Ok(());
    }
    let decision = controller.decide(node.state, node.levels)?;
    let aoi = node.aoi + node.discount * f64::from(node.state.a_r);
    let energy = if decision.action.is_transmit() {
        node.energy + node.discount * cfg.energy_cost
    } else {
        node.energy
    };
    let row = transition_row(node.state, decision.action, cfg)?;
    for (i, &(next, p)) in row.entries().iter().enumerate() {
        let (levels, _) = next_levels(node.levels, &decision, i)?;
        let child = Node {
            state: next,
            levels,
            prob: node.prob * p,
            aoi,
            energy,
            discount: node.discount * cfg.gamma,
        };
        walk(controller, cfg, child, remaining - 1, out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactObjective {
    pub mean_aoi: f64,
    pub cvar_aoi: f64,
    pub mean_energy: f64,
    pub objective: f64,
}

/// `E[AoI] + η·CVaR_α(AoI) + ν·E[energy]` of an enumerated path law.
pub fn exact_objective(dist: &PathDistribution, cfg: &SystemConfig) -> Result<ExactObjective> {
    if dist.atoms.is_empty() {
        return Err(Error::Domain("empty path distribution".into()));
    }
    let total = dist.total_prob();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Contract(format!(
            "path probabilities sum to {total}"
        )));
    }
    let mean_aoi = dist.mean_aoi();
    let cvar_aoi = dist.cvar_aoi(cfg.alpha)?;
    let mean_energy = dist.mean_energy();
    Ok(ExactObjective {
        mean_aoi,
        cvar_aoi,
        mean_energy,
        objective: mean_aoi + cfg.eta * cvar_aoi + cfg.nu * mean_energy,
    })
}

/// Brute force over all stationary AoI-only policies (Idle forced on the
/// diagonal), minimizing the horizon-`H` exact objective from `initial`.
/// Ties go to the policy with fewer Transmit states.
pub fn best_stationary_aoi_policy(
    cfg: &SystemConfig,
    horizon: usize,
    initial: AoiState,
) -> Result<(StationaryPolicy, ExactObjective)> {
    cfg.validate()?;
    let space = StateSpace::new(cfg);
    if space.len() > MAX_POLICY_STATES {
        return Err(Error::Guard(format!(
            "{} AoI states exceed the brute-force limit {MAX_POLICY_STATES}",
            space.len()
        )));
    }
    let free: Vec<AoiState> = space
        .states()
        .iter()
        .copied()
        .filter(|s| !s.is_synced())
        .collect();
    let mut best: Option<(f64, u32, StationaryPolicy, ExactObjective)> = None;
    for mask in 0u32..(1 << free.len()) {
        let actions = space
            .states()
            .iter()
            .map(|&s| {
                let a = match free.iter().position(|&f| f == s) {
                    Some(bit) if mask & (1 << bit) != 0 => Action::Transmit,
                    _ => Action::Idle,
                };
                (s, a)
            })
            .collect();
        let policy = StationaryPolicy::new(actions);
        let obj = exact_objective(&enumerate_paths(&policy, cfg, horizon, initial)?, cfg)?;
        let key = (obj.objective, mask.count_ones());
        let better = match &best {
            None => true,
            Some((v, k, _, _)) => key.0 < *v || (key.0 == *v && key.1 < *k),
        };
        if better {
            best = Some((key.0, key.1, policy, obj));
        }
    }
    let (_, _, policy, obj) = best.expect("at least the all-Idle policy is evaluated");
    Ok((policy, obj))
}
