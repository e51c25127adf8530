//! Value iteration on the risk-augmented state space `(A, x, y)`.
//!
//! One backup is
//!
//! ```text
//! T[V](A,x,y) = min_s (1+η)·a_r + ν·s·C
//!               + γ · max_{ξ ∈ [x,1/y], Σ ξ·P = 1} Σ_{A'} ξ(A')·V(A', x/ξ(A'), y·ξ(A'))·P(A'|A,s)
//! ```
//!
//! The inner maximization is separable: each successor contributes
//! `P_i·g_i(ξ_i)` with `g_i(ξ) = ξ·V(A'_i, x/ξ, y·ξ)`, coupled only through the
//! normalization `Σ P_i·ξ_i = 1`. Rows with two successors are solved by a
//! one-dimensional scan; wider rows either by a nested scan over a fixed
//! candidate lattice ([`InnerSearch::Nested`]) or by coordinate ascent
//! ([`InnerSearch::CoordinateAscent`]). Because the nested lattice depends only on
//! `(x, y, P)`, that search keeps the operator monotone and shift-equivariant for
//! arbitrary tables.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{InnerSearch, Interpolation, SolverSettings, SystemConfig};
use crate::error::{Error, Result};
use crate::grid::{build_risk_grid, RiskGrid};
use crate::mdp::{stage_cost, transition_row, Action, AoiState, StateSpace};
use crate::risk::{
    envelope_feasible, mixture_risk_levels, EnvelopeWeights, RiskLevels, ENVELOPE_TOL,
};

/// Values over AoI states × risk-grid nodes, stored state-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    grid: Arc<RiskGrid>,
    space: Arc<StateSpace>,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn constant(grid: Arc<RiskGrid>, space: Arc<StateSpace>, value: f64) -> Self {
        let values = vec![value; grid.len() * space.len()];
        Self {
            grid,
            space,
            values,
        }
    }

    /// Builds a table from `f(state_index, node_index)`.
    pub fn from_fn(
        grid: Arc<RiskGrid>,
        space: Arc<StateSpace>,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let n = grid.len();
        let values = (0..space.len() * n).map(|k| f(k / n, k % n)).collect();
        Self {
            grid,
            space,
            values,
        }
    }

    pub fn from_values(
        grid: Arc<RiskGrid>,
        space: Arc<StateSpace>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != grid.len() * space.len() {
            return Err(Error::Domain(format!(
                "{} values for {} states × {} nodes",
                values.len(),
                space.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            space,
            values,
        })
    }

    pub fn grid(&self) -> &Arc<RiskGrid> {
        &self.grid
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn state_values(&self, state_idx: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[state_idx * n..(state_idx + 1) * n]
    }

    pub fn get(&self, state: AoiState, node: usize) -> Option<f64> {
        let si = self.space.index(state)?;
        (node < self.grid.len()).then(|| self.values[si * self.grid.len() + node])
    }

    pub fn interpolate(
        &self,
        state: AoiState,
        levels: RiskLevels,
        method: Interpolation,
    ) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::Domain("empty value table".into()));
        }
        let si = self
            .space
            .index(state)
            .ok_or_else(|| Error::Domain(format!("state {state} not in table")))?;
        self.grid.interpolate(self.state_values(si), levels, method)
    }

    /// `‖self − other‖∞`.
    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ValueTable {
        ValueTable {
            grid: self.grid.clone(),
            space: self.space.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Stationary policy on the augmented space: an action and the maximizing
/// envelope weights at every (state, node). Weights follow the successor order
/// of `transition_row(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPolicy {
    cfg: SystemConfig,
    grid: Arc<RiskGrid>,
    space: Arc<StateSpace>,
    initial_levels: RiskLevels,
    actions: Vec<Action>,
    xi: Vec<EnvelopeWeights>,
}

impl AugmentedPolicy {
    pub fn new(
        cfg: SystemConfig,
        grid: Arc<RiskGrid>,
        space: Arc<StateSpace>,
        initial_levels: RiskLevels,
        actions: Vec<Action>,
        xi: Vec<EnvelopeWeights>,
    ) -> Result<Self> {
        let expected = grid.len() * space.len();
        if actions.len() != expected || xi.len() != expected {
            return Err(Error::Domain(format!(
                "policy tables have {}/{} entries, expected {expected}",
                actions.len(),
                xi.len()
            )));
        }
        Ok(Self {
            cfg,
            grid,
            space,
            initial_levels,
            actions,
            xi,
        })
    }

    pub fn cfg(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Arc<RiskGrid> {
        &self.grid
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn initial_levels(&self) -> RiskLevels {
        self.initial_levels
    }

    pub fn action_at(&self, state_idx: usize, node: usize) -> Action {
        self.actions[state_idx * self.grid.len() + node]
    }

    pub fn xi_at(&self, state_idx: usize, node: usize) -> &EnvelopeWeights {
        &self.xi[state_idx * self.grid.len() + node]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn xi(&self) -> &[EnvelopeWeights] {
        &self.xi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub vi_tolerance: f64,
    /// `γ^N/(1-γ)·((1+η)·Â_r + ν·C)` for the `N` sweeps performed, starting from zero.
    pub a_priori_bound: f64,
    pub grid_nodes: usize,
    pub states: usize,
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub cfg: SystemConfig,
    pub settings: SolverSettings,
    pub initial_levels: RiskLevels,
    pub table: ValueTable,
    pub policy: AugmentedPolicy,
    pub report: ConvergenceReport,
}

impl Solution {
    /// Solved objective `V*(state, x₀, y₀)`.
    pub fn value_at_initial(&self, state: AoiState) -> Option<f64> {
        let node = self.table.grid().find_node(self.initial_levels)?;
        self.table.get(state, node)
    }

    pub fn initial_node(&self) -> Option<usize> {
        self.table.grid().find_node(self.initial_levels)
    }
}

// ---------------------------------------------------------------------------
// Backup machinery
// ---------------------------------------------------------------------------

struct RowData {
    probs: Vec<f64>,
    succ: Vec<usize>,
}

/// Per-instance data shared by every backup of a sweep.
struct Kernel {
    cfg: SystemConfig,
    space: Arc<StateSpace>,
    /// Indexed `[state][action as usize]`.
    rows: Vec<[RowData; 2]>,
}

impl Kernel {
    fn new(cfg: &SystemConfig, space: Arc<StateSpace>) -> Result<Self> {
        let mut rows = Vec::with_capacity(space.len());
        for &s in space.states() {
            let mut pair = Vec::with_capacity(2);
            for a in Action::ALL {
                let row = transition_row(s, a, cfg)?;
                let succ = row
                    .entries()
                    .iter()
                    .map(|&(t, _)| {
                        space.index(t).ok_or_else(|| {
                            Error::Domain(format!("successor {t} outside state space"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                pair.push(RowData {
                    probs: row.probs(),
                    succ,
                });
            }
            let transmit = pair.pop().expect("two actions");
            let idle = pair.pop().expect("two actions");
            rows.push([idle, transmit]);
        }
        Ok(Self {
            cfg: *cfg,
            space,
            rows,
        })
    }

    fn row(&self, state_idx: usize, action: Action) -> &RowData {
        &self.rows[state_idx][action as usize]
    }

    fn allowed_actions(&self, state_idx: usize) -> &'static [Action] {
        if self.space.states()[state_idx].is_synced() {
            &[Action::Idle]
        } else {
            &Action::ALL
        }
    }
}

/// Candidate values for one envelope weight: geometric on `[lo, hi]`, plus 1.
#[derive(Debug, Clone)]
struct ScanSet {
    xi: Vec<f64>,
    ln_xi: Vec<f64>,
}

impl ScanSet {
    fn new(lo: f64, hi: f64, points: usize) -> Self {
        let (llo, lhi) = (lo.ln(), hi.ln());
        let mut xi: Vec<f64> = (0..points)
            .map(|j| {
                let t = j as f64 / (points - 1) as f64;
                (llo + (lhi - llo) * t).exp()
            })
            .collect();
        xi[0] = lo;
        xi[points - 1] = hi;
        xi.push(1.0);
        xi.sort_by(f64::total_cmp);
        xi.dedup();
        let ln_xi = xi.iter().map(|v| v.ln()).collect();
        Self { xi, ln_xi }
    }
}

/// Envelope maximization at one (levels, row) pair against a fixed table.
struct Inner<'a> {
    grid: &'a RiskGrid,
    interp: Interpolation,
    values: &'a [f64],
    n_nodes: usize,
    probs: &'a [f64],
    succ: &'a [usize],
    lx: f64,
    ly: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    scan: &'a ScanSet,
    mass_points: usize,
}

impl Inner<'_> {
    #[inline]
    fn value_at(&self, comp: usize, ln_xi: f64) -> f64 {
        let base = self.succ[comp] * self.n_nodes;
        let st = self
            .grid
            .stencil(self.lx - ln_xi, self.ly + ln_xi, self.interp);
        st.apply(&self.values[base..base + self.n_nodes])
    }

    /// `ξ·V(A'_comp, x/ξ, y·ξ)`.
    #[inline]
    fn g(&self, comp: usize, xi: f64) -> f64 {
        xi * self.value_at(comp, xi.ln())
    }

    fn clip(&self, xi: f64) -> Option<f64> {
        if xi < self.lo - self.tol || xi > self.hi + self.tol || !xi.is_finite() {
            None
        } else {
            Some(xi.clamp(self.lo, self.hi))
        }
    }

    fn objective(&self, xi: &[f64]) -> f64 {
        xi.iter()
            .enumerate()
            .map(|(i, &w)| self.probs[i] * self.g(i, w))
            .sum()
    }

    fn uniform(&self) -> (f64, Vec<f64>) {
        let v = (0..self.probs.len())
            .map(|i| self.probs[i] * self.value_at(i, 0.0))
            .sum();
        (v, vec![1.0; self.probs.len()])
    }

    fn solve(
        &self,
        search: InnerSearch,
        rounds: usize,
        pre: &mut Vec<Vec<f64>>,
    ) -> Option<(f64, Vec<f64>)> {
        let k = self.probs.len();
        if k == 1 {
            return Some(self.uniform());
        }
        // g on the scan set, per component.
        pre.clear();
        for i in 0..k {
            pre.push(
                self.scan
                    .xi
                    .iter()
                    .zip(&self.scan.ln_xi)
                    .map(|(&xi, &l)| xi * self.value_at(i, l))
                    .collect(),
            );
        }
        let comps: Vec<usize> = (0..k).collect();
        match (k, search) {
            (2, _) | (_, InnerSearch::Nested) => {
                let mut xi = vec![0.0; k];
                let (v, assignment) = self.group(&comps, 1.0, pre)?;
                for (c, w) in assignment {
                    xi[c] = w;
                }
                Some((v, xi))
            }
            (_, InnerSearch::CoordinateAscent) => self.coordinate_ascent(rounds, pre),
        }
    }

    /// Best split of `mass` among `comps`: value and `(component, ξ)` pairs.
    fn group(
        &self,
        comps: &[usize],
        mass: f64,
        pre: &[Vec<f64>],
    ) -> Option<(f64, Vec<(usize, f64)>)> {
        match comps.len() {
            1 => {
                let c = comps[0];
                let xi = self.clip(mass / self.probs[c])?;
                Some((self.probs[c] * self.g(c, xi), vec![(c, xi)]))
            }
            2 => {
                let (v, xa, xb) = self.pair(comps[0], comps[1], mass, pre)?;
                Some((v, vec![(comps[0], xa), (comps[1], xb)]))
            }
            _ => {
                let half = comps.len() / 2;
                let (a, b) = comps.split_at(half);
                let pa: f64 = a.iter().map(|&c| self.probs[c]).sum();
                let pb: f64 = b.iter().map(|&c| self.probs[c]).sum();
                let lo = (pa * self.lo).max(mass - pb * self.hi);
                let hi = (pa * self.hi).min(mass - pb * self.lo);
                if lo > hi + self.tol {
                    return None;
                }
                let hi = hi.max(lo);
                let mut masses: Vec<f64> = if hi - lo <= self.tol {
                    vec![lo]
                } else {
                    let m = self.mass_points;
                    (0..m)
                        .map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64)
                        .collect()
                };
                let proportional = mass * pa / (pa + pb);
                if proportional >= lo && proportional <= hi {
                    masses.push(proportional);
                }
                let mut best: Option<(f64, Vec<(usize, f64)>)> = None;
                for ma in masses {
                    let Some((va, wa)) = self.group(a, ma, pre) else {
                        continue;
                    };
                    let Some((vb, wb)) = self.group(b, mass - ma, pre) else {
                        continue;
                    };
                    let v = va + vb;
                    if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                        let mut w = wa;
                        w.extend(wb);
                        best = Some((v, w));
                    }
                }
                best
            }
        }
    }

    /// Two components sharing `mass`: scan each one over the scan set with the
    /// other fixed by the mass constraint.
    fn pair(&self, a: usize, b: usize, mass: f64, pre: &[Vec<f64>]) -> Option<(f64, f64, f64)> {
        let (pa, pb) = (self.probs[a], self.probs[b]);
        let mut best: Option<(f64, f64, f64)> = None;
        for (j, &xa) in self.scan.xi.iter().enumerate() {
            let Some(xb) = self.clip((mass - pa * xa) / pb) else {
                continue;
            };
            let v = pa * pre[a][j] + pb * self.g(b, xb);
            if best.is_none_or(|(bv, _, _)| v > bv) {
                best = Some((v, xa, xb));
            }
        }
        for (j, &xb) in self.scan.xi.iter().enumerate() {
            let Some(xa) = self.clip((mass - pb * xb) / pa) else {
                continue;
            };
            let v = pa * self.g(a, xa) + pb * pre[b][j];
            if best.is_none_or(|(bv, _, _)| v > bv) {
                best = Some((v, xa, xb));
            }
        }
        best
    }

    /// Moves the components other than `fixed` so the total mass is 1 again,
    /// shifting each in proportion to its slack toward the needed bound.
    fn rebalance(&self, xi: &mut [f64], fixed: usize) -> bool {
        let mass: f64 = xi.iter().zip(self.probs).map(|(w, p)| w * p).sum();
        let gap = 1.0 - mass;
        if gap.abs() <= 1e-15 {
            return true;
        }
        let target = if gap > 0.0 { self.hi } else { self.lo };
        let slack: f64 = xi
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fixed)
            .map(|(i, &w)| (target - w) * self.probs[i])
            .sum();
        if slack == 0.0 || gap / slack > 1.0 + 1e-12 {
            return false;
        }
        let t = (gap / slack).min(1.0);
        for (i, w) in xi.iter_mut().enumerate() {
            if i != fixed {
                *w = (*w + (target - *w) * t).clamp(self.lo, self.hi);
            }
        }
        true
    }

    fn coordinate_ascent(&self, rounds: usize, pre: &[Vec<f64>]) -> Option<(f64, Vec<f64>)> {
        let k = self.probs.len();
        // Starts: uniform; lowest-valued successor at the lower bound; highest at the upper.
        let level_vals: Vec<f64> = (0..k).map(|i| self.value_at(i, 0.0)).collect();
        let argmin = (0..k).min_by(|&a, &b| level_vals[a].total_cmp(&level_vals[b]))?;
        let argmax = (0..k).max_by(|&a, &b| level_vals[a].total_cmp(&level_vals[b]))?;
        let mut starts = vec![vec![1.0; k]];
        for (comp, bound) in [(argmin, self.lo), (argmax, self.hi)] {
            let mut s = vec![1.0; k];
            s[comp] = bound;
            if self.rebalance(&mut s, comp) {
                starts.push(s);
            }
        }

        let mut best: Option<(f64, Vec<f64>)> = None;
        for start in starts {
            let mut cur = start;
            let mut cur_v = self.objective(&cur);
            for _ in 0..rounds {
                let mut improved = false;
                for i in 0..k {
                    for (j, &cand) in self.scan.xi.iter().enumerate() {
                        let mut trial = cur.clone();
                        trial[i] = cand;
                        if !self.rebalance(&mut trial, i) {
                            continue;
                        }
                        let v = self.probs[i] * pre[i][j]
                            + (0..k)
                                .filter(|&m| m != i)
                                .map(|m| self.probs[m] * self.g(m, trial[m]))
                                .sum::<f64>();
                        if v > cur_v {
                            cur_v = v;
                            cur = trial;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            if best.as_ref().is_none_or(|(bv, _)| cur_v > *bv) {
                best = Some((cur_v, cur));
            }
        }
        best
    }
}

/// Reusable evaluator of `T` for one instance and settings.
struct Operator {
    kernel: Kernel,
    settings: SolverSettings,
    grid: Arc<RiskGrid>,
    scans: Vec<Option<ScanSet>>,
}

struct Backup {
    value: f64,
    action: Action,
    xi: Vec<f64>,
}

impl Operator {
    fn new(
        cfg: &SystemConfig,
        settings: &SolverSettings,
        grid: Arc<RiskGrid>,
        space: Arc<StateSpace>,
    ) -> Result<Self> {
        let kernel = Kernel::new(cfg, space)?;
        let scans = grid
            .nodes()
            .map(|lv| {
                (!lv.is_degenerate())
                    .then(|| ScanSet::new(lv.lower(), lv.upper(), settings.inner_grid_points))
            })
            .collect();
        Ok(Self {
            kernel,
            settings: *settings,
            grid,
            scans,
        })
    }

    fn inner(
        &self,
        table: &ValueTable,
        state_idx: usize,
        action: Action,
        levels: RiskLevels,
        scan: Option<&ScanSet>,
        pre: &mut Vec<Vec<f64>>,
    ) -> Result<(f64, Vec<f64>)> {
        let row = self.kernel.row(state_idx, action);
        let owned;
        let degenerate = scan.is_none() && levels.is_degenerate();
        let scan = match scan {
            Some(s) => s,
            None => {
                owned = if degenerate {
                    ScanSet {
                        xi: vec![1.0],
                        ln_xi: vec![0.0],
                    }
                } else {
                    ScanSet::new(
                        levels.lower(),
                        levels.upper(),
                        self.settings.inner_grid_points,
                    )
                };
                &owned
            }
        };
        let inner = Inner {
            grid: &self.grid,
            interp: self.settings.interpolation,
            values: table.values(),
            n_nodes: self.grid.len(),
            probs: &row.probs,
            succ: &row.succ,
            lx: levels.x.ln(),
            ly: levels.y.ln(),
            lo: levels.lower(),
            hi: levels.upper(),
            tol: 1e-12 * levels.upper(),
            scan,
            mass_points: self.settings.inner_grid_points,
        };
        if degenerate {
            return Ok(inner.uniform());
        }
        inner
            .solve(
                self.settings.inner_search,
                self.settings.coordinate_ascent_rounds,
                pre,
            )
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "no feasible ξ for state {} action {action} levels ({}, {}) probs {:?}",
                    self.kernel.space.states()[state_idx],
                    levels.x,
                    levels.y,
                    row.probs
                ))
            })
    }

    fn backup(
        &self,
        table: &ValueTable,
        state_idx: usize,
        levels: RiskLevels,
        scan: Option<&ScanSet>,
        pre: &mut Vec<Vec<f64>>,
    ) -> Result<Backup> {
        let state = self.kernel.space.states()[state_idx];
        let gamma = self.kernel.cfg.gamma;
        let mut best: Option<Backup> = None;
        for &action in self.kernel.allowed_actions(state_idx) {
            let (inner, xi) = self.inner(table, state_idx, action, levels, scan, pre)?;
            let value = stage_cost(state, action, &self.kernel.cfg) + gamma * inner;
            // Idle is tried first and keeps exact ties.
            if best.as_ref().is_none_or(|b| value < b.value) {
                best = Some(Backup { value, action, xi });
            }
        }
        Ok(best.expect("at least one action"))
    }

    fn sweep(&self, table: &ValueTable) -> Result<(ValueTable, Vec<Action>, Vec<EnvelopeWeights>)> {
        let n = self.grid.len();
        let total = n * self.kernel.space.len();
        let mut values = Vec::with_capacity(total);
        let mut actions = Vec::with_capacity(total);
        let mut xis = Vec::with_capacity(total);
        let mut pre = Vec::new();
        for si in 0..self.kernel.space.len() {
            for node in 0..n {
                let levels = self.grid.node(node);
                let b = self.backup(table, si, levels, self.scans[node].as_ref(), &mut pre)?;
                values.push(b.value);
                actions.push(b.action);
                xis.push(EnvelopeWeights { weights: b.xi });
            }
        }
        let next = ValueTable::from_values(self.grid.clone(), self.kernel.space.clone(), values)?;
        Ok((next, actions, xis))
    }
}

fn check_table(table: &ValueTable, cfg: &SystemConfig) -> Result<()> {
    let bound = cfg.value_bound();
    let slack = 1e-9 * bound.max(1.0);
    let n = table.grid().len();
    for (k, &v) in table.values().iter().enumerate() {
        if !(v >= -slack && v <= bound + slack) {
            let s = table.space().states()[k / n];
            return Err(Error::ValueBound {
                value: v,
                a_d: s.a_d,
                a_r: s.a_r,
                node: k % n,
                bound,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Envelope maximization for `(state, action)` at `levels`: the value
/// `max_ξ Σ ξ(A')·V(A', x/ξ, y·ξ)·P(A')` and its maximizer.
pub fn inner_max(
    table: &ValueTable,
    state: AoiState,
    action: Action,
    levels: RiskLevels,
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> Result<(f64, EnvelopeWeights)> {
    let op = Operator::new(cfg, settings, table.grid().clone(), table.space().clone())?;
    let si = table
        .space()
        .index(state)
        .ok_or_else(|| Error::Domain(format!("state {state} not in table")))?;
    let (v, xi) = op.inner(table, si, action, levels, None, &mut Vec::new())?;
    Ok((v, EnvelopeWeights { weights: xi }))
}

/// One risk-aware Bellman backup at `(state, levels)`.
pub fn bellman_apply(
    table: &ValueTable,
    state: AoiState,
    levels: RiskLevels,
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> Result<(f64, Action, EnvelopeWeights)> {
    let op = Operator::new(cfg, settings, table.grid().clone(), table.space().clone())?;
    let si = table
        .space()
        .index(state)
        .ok_or_else(|| Error::Domain(format!("state {state} not in table")))?;
    let b = op.backup(table, si, levels, None, &mut Vec::new())?;
    Ok((b.value, b.action, EnvelopeWeights { weights: b.xi }))
}

/// `T[V]` at every (state, node) of the table's grid.
pub fn bellman_sweep(
    table: &ValueTable,
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> Result<(ValueTable, Vec<Action>, Vec<EnvelopeWeights>)> {
    let op = Operator::new(cfg, settings, table.grid().clone(), table.space().clone())?;
    op.sweep(table)
}

/// Solver grid for an instance: geometric in the risk levels, with the initial
/// levels `mixture_risk_levels(η, α)` snapped onto a node.
pub fn solver_grid(
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> Result<(RiskGrid, RiskLevels)> {
    let levels0 = mixture_risk_levels(cfg.eta, cfg.alpha);
    let grid = build_risk_grid(levels0, settings.grid_points, settings.mode)?.snapped(levels0);
    Ok((grid, levels0))
}

/// Value iteration `V_k = T[V_{k-1}]` from `V_0 ≡ 0`.
///
/// Stops when the sup-norm change drops to `vi_tolerance` or after
/// `max_iterations` sweeps; in the latter case the report is flagged as not
/// converged and the last table is still returned.
pub fn value_iteration(cfg: &SystemConfig, settings: &SolverSettings) -> Result<Solution> {
    cfg.validate()?;
    settings.validate()?;
    let (grid, levels0) = solver_grid(cfg, settings)?;
    let grid = Arc::new(grid);
    let space = Arc::new(StateSpace::new(cfg));
    let op = Operator::new(cfg, settings, grid.clone(), space.clone())?;

    let mut table = ValueTable::constant(grid.clone(), space.clone(), 0.0);
    let mut history = Vec::new();
    let mut last_actions = vec![Action::Idle; table.values().len()];
    let mut last_xi = vec![EnvelopeWeights::ones(1); table.values().len()];
    let mut converged = false;
    while history.len() < settings.max_iterations {
        let (next, actions, xi) = op.sweep(&table)?;
        check_table(&next, cfg)?;
        let residual = next.sup_distance(&table);
        history.push(residual);
        table = next;
        last_actions = actions;
        last_xi = xi;
        if residual <= settings.vi_tolerance {
            converged = true;
            break;
        }
    }
    if history.is_empty() {
        // max_iterations == 0: still hand back a greedy policy for V_0.
        let (_, actions, xi) = op.sweep(&table)?;
        last_actions = actions;
        last_xi = xi;
    }
    for (k, w) in last_xi.iter().enumerate() {
        let si = k / grid.len();
        let row = op.kernel.row(si, last_actions[k]);
        if !envelope_feasible(w, &row.probs, grid.node(k % grid.len()), ENVELOPE_TOL) {
            return Err(Error::Infeasible(format!(
                "stored ξ {:?} infeasible at state {} node {}",
                w.weights,
                space.states()[si],
                k % grid.len()
            )));
        }
    }

    let iterations = history.len();
    let report = ConvergenceReport {
        converged,
        iterations,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
        residual_history: history,
        vi_tolerance: settings.vi_tolerance,
        a_priori_bound: cfg.truncation_bound(iterations),
        grid_nodes: grid.len(),
        states: space.len(),
    };
    let policy = AugmentedPolicy::new(*cfg, grid, space, levels0, last_actions, last_xi)?;
    Ok(Solution {
        cfg: *cfg,
        settings: *settings,
        initial_levels: levels0,
        table,
        policy,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GridMode;

    fn cfg() -> SystemConfig {
        SystemConfig {
            lambda: 0.5,
            p: 0.7,
            energy_cost: 1.0,
            gamma: 0.5,
            eta: 1.0,
            nu: 0.1,
            alpha: 0.3,
            cap_device: 3,
            cap_receiver: 3,
        }
    }

    fn tiny_cfg() -> SystemConfig {
        SystemConfig {
            cap_device: 1,
            cap_receiver: 1,
            eta: 0.0,
            nu: 0.0,
            ..cfg()
        }
    }

    #[test]
    fn single_state_fixed_point() {
        let c = tiny_cfg();
        let s = SolverSettings::default();
        let sol = value_iteration(&c, &s).unwrap();
        assert!(sol.report.converged);
        let v = sol.value_at_initial(AoiState::new(1, 1)).unwrap();
        assert!((v - 2.0).abs() < 1e-7, "{v}");
        assert_eq!(sol.table.grid().len(), 1);
    }

    #[test]
    fn one_state_backup_of_constant_table() {
        let c = tiny_cfg();
        let s = SolverSettings::default();
        let (grid, lv) = solver_grid(&c, &s).unwrap();
        let space = Arc::new(StateSpace::new(&c));
        let table = ValueTable::constant(Arc::new(grid), space, 2.0);
        let (v, a, xi) = bellman_apply(&table, AoiState::new(1, 1), lv, &c, &s).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(a, Action::Idle);
        assert_eq!(xi.weights, vec![1.0]);
    }

    #[test]
    fn two_successor_scan_hits_envelope_corner() {
        // Table constant in the levels; successors (1,3) and (2,3) of Idle from (1,2).
        let mut c = cfg();
        c.lambda = 0.5;
        let s = SolverSettings::default();
        let levels = RiskLevels::new(0.5, 0.5).unwrap();
        let grid = Arc::new(
            build_risk_grid(levels, 17, GridMode::Manifold1D)
                .unwrap()
                .snapped(levels),
        );
        let space = Arc::new(StateSpace::new(&c));
        let table = ValueTable::from_fn(grid, space.clone(), |si, _| {
            let st = space.states()[si];
            if st == AoiState::new(2, 3) {
                0.0
            } else if st == AoiState::new(1, 3) {
                10.0
            } else {
                1.0
            }
        });
        let (v, xi) = inner_max(&table, AoiState::new(1, 2), Action::Idle, levels, &c, &s).unwrap();
        // Row order is (1,3) then (2,3).
        assert!((v - 7.5).abs() < 1e-12, "{v}");
        assert!((xi.weights[0] - 1.5).abs() < 1e-12 && (xi.weights[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heavy_energy_cost_never_transmits() {
        let mut c = cfg();
        c.nu = 1e6;
        let s = SolverSettings {
            grid_points: 9,
            inner_grid_points: 17,
            ..SolverSettings::default()
        };
        let sol = value_iteration(&c, &s).unwrap();
        assert!(sol.policy.actions().iter().all(|&a| a == Action::Idle));
    }

    #[test]
    fn max_iterations_flags_nonconvergence() {
        let s = SolverSettings {
            max_iterations: 1,
            grid_points: 5,
            inner_grid_points: 9,
            ..SolverSettings::default()
        };
        let sol = value_iteration(&cfg(), &s).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.iterations, 1);
    }

    #[test]
    fn coordinate_ascent_agrees_with_nested() {
        let base = SolverSettings {
            grid_points: 17,
            inner_grid_points: 33,
            vi_tolerance: 1e-9,
            ..SolverSettings::default()
        };
        let nested = value_iteration(&cfg(), &base).unwrap();
        let ca = value_iteration(
            &cfg(),
            &SolverSettings {
                inner_search: InnerSearch::CoordinateAscent,
                ..base
            },
        )
        .unwrap();
        let s0 = AoiState::new(1, 1);
        let a = nested.value_at_initial(s0).unwrap();
        let b = ca.value_at_initial(s0).unwrap();
        assert!((a - b).abs() / a < 5e-3, "{a} vs {b}");
    }
}
