//! CVaR and risk-envelope machinery.
//!
//! Two routes to CVaR are kept side by side: the primal minimization over a
//! threshold `q` ([`cvar`]) and the dual maximization over the CVaR envelope
//! `ξ ∈ [0, 1/α], E[ξ] = 1` ([`cvar_dual`]). The mixture `(1-β)·E + β·CVaR_α`
//! has envelope bounds `[1-β, 1+β(1/α-1)]`; with `β = η/(1+η)` those bounds are
//! exactly the [`RiskLevels`] `(x, 1/y)` returned by [`mixture_risk_levels`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for envelope membership checks.
pub const ENVELOPE_TOL: f64 = 1e-9;

/// Finite-support distribution: `(value, probability)` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("empty distribution".into()));
        }
        let mut total = 0.0;
        for &(v, p) in &atoms {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite atom value {v}")));
            }
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Domain(format!("atom probability {p} not positive")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { atoms })
    }

    /// Equal-weight distribution over `values`.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("empty distribution".into()));
        }
        let w = 1.0 / values.len() as f64;
        let atoms: Vec<_> = values.iter().map(|&v| (v, w)).collect();
        // n·(1/n) may miss 1 by a few ulps for large n.
        if atoms.iter().any(|(v, _)| !v.is_finite()) {
            return Err(Error::Domain("non-finite sample".into()));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v * p).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.atoms
            .iter()
            .map(|&(v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Envelope risk levels `(x, y)`: weights are confined to `[x, 1/y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskLevels {
    pub x: f64,
    pub y: f64,
}

impl RiskLevels {
    pub const NEUTRAL: RiskLevels = RiskLevels { x: 1.0, y: 1.0 };

    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(x > 0.0 && x <= 1.0 && y > 0.0 && y <= 1.0) {
            return Err(Error::Domain(format!(
                "risk levels ({x}, {y}) outside (0,1]²"
            )));
        }
        Ok(Self { x, y })
    }

    pub fn lower(&self) -> f64 {
        self.x
    }

    pub fn upper(&self) -> f64 {
        1.0 / self.y
    }

    pub fn product(&self) -> f64 {
        self.x * self.y
    }

    /// The envelope collapses to `ξ ≡ 1` (pure expectation).
    pub fn is_degenerate(&self) -> bool {
        self.x >= 1.0 || self.y >= 1.0
    }
}

/// Density reweighting `ξ`, one entry per outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvelopeWeights {
    pub weights: Vec<f64>,
}

impl EnvelopeWeights {
    pub fn ones(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl From<Vec<f64>> for EnvelopeWeights {
    fn from(weights: Vec<f64>) -> Self {
        Self { weights }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("CVaR level {alpha} outside (0,1]")))
    }
}

/// `min_q q + E[(Z-q)⁺]/α` by scanning `q` over the support.
pub fn cvar(dist: &DiscreteDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(dist.mean());
    }
    let mut atoms = dist.atoms.clone();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(qscan_sorted(&atoms, alpha))
}

/// CVaR of the empirical measure of `samples` (weights `1/n`), by the same q-scan.
pub fn cvar_of_samples(samples: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if samples.is_empty() {
        return Err(Error::Domain("no samples".into()));
    }
    let w = 1.0 / samples.len() as f64;
    let mut atoms: Vec<(f64, f64)> = samples.iter().map(|&v| (v, w)).collect();
    if alpha == 1.0 {
        return Ok(atoms.iter().map(|&(v, p)| v * p).sum());
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(qscan_sorted(&atoms, alpha))
}

/// Atoms ascending by value. For `q = v_k`, the excess `E[(Z-q)⁺]` only involves
/// atoms above `k`, accumulated from the top as a suffix sum.
pub(crate) fn qscan_sorted(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut tail_p = 0.0;
    let mut tail_pv = 0.0;
    for &(q, p) in atoms.iter().rev() {
        let excess = (tail_pv - q * tail_p).max(0.0);
        best = best.min(q + excess / alpha);
        tail_p += p;
        tail_pv += p * q;
    }
    best
}

/// `max_ξ E[ξZ]` over the CVaR envelope, filling weight `1/α` from the largest value down.
pub fn cvar_dual(dist: &DiscreteDistribution, alpha: f64) -> Result<f64> {
    let w = cvar_dual_weights(dist, alpha)?;
    let probs: Vec<f64> = dist.atoms.iter().map(|&(_, p)| p).collect();
    let values: Vec<f64> = dist.atoms.iter().map(|&(v, _)| v).collect();
    Ok(weighted_expectation(&w, &probs, &values))
}

/// Maximizing envelope density for [`cvar_dual`], aligned with `dist.atoms()`.
pub fn cvar_dual_weights(dist: &DiscreteDistribution, alpha: f64) -> Result<EnvelopeWeights> {
    check_alpha(alpha)?;
    envelope_argmax(dist, 0.0, 1.0 / alpha)
}

/// `max_ξ E[ξZ]` over `ξ ∈ [lower, upper]`, `E[ξ] = 1`.
///
/// Every atom starts at `lower`; the remaining mass `1 - lower` is poured into
/// the largest values up to `upper`.
pub fn envelope_max(dist: &DiscreteDistribution, lower: f64, upper: f64) -> Result<f64> {
    let w = envelope_argmax(dist, lower, upper)?;
    let probs: Vec<f64> = dist.atoms.iter().map(|&(_, p)| p).collect();
    let values: Vec<f64> = dist.atoms.iter().map(|&(v, _)| v).collect();
    Ok(weighted_expectation(&w, &probs, &values))
}

fn envelope_argmax(dist: &DiscreteDistribution, lower: f64, upper: f64) -> Result<EnvelopeWeights> {
    if !((0.0..=1.0).contains(&lower) && upper >= 1.0) {
        return Err(Error::Domain(format!(
            "envelope bounds [{lower}, {upper}] do not contain 1"
        )));
    }
    let n = dist.atoms.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist.atoms[b].0.total_cmp(&dist.atoms[a].0));
    let mut weights = vec![lower; n];
    let mut budget = 1.0 - lower * dist.atoms.iter().map(|&(_, p)| p).sum::<f64>();
    for i in order {
        if budget <= 0.0 {
            break;
        }
        let p = dist.atoms[i].1;
        let room = (upper - lower) * p;
        let take = room.min(budget);
        weights[i] = lower + take / p;
        budget -= take;
    }
    Ok(EnvelopeWeights { weights })
}

/// The `(x, y)` levels of `(1/(1+η))·E + (η/(1+η))·CVaR_α`.
pub fn mixture_risk_levels(eta: f64, alpha: f64) -> RiskLevels {
    RiskLevels {
        x: 1.0 / (1.0 + eta),
        y: alpha * (1.0 + eta) / (alpha + eta),
    }
}

pub fn envelope_feasible(w: &EnvelopeWeights, probs: &[f64], levels: RiskLevels, tol: f64) -> bool {
    if w.weights.len() != probs.len() {
        return false;
    }
    let lo = levels.lower() - tol;
    let hi = levels.upper() + tol;
    if !w.weights.iter().all(|&xi| xi >= lo && xi <= hi) {
        return false;
    }
    let mass: f64 = w.weights.iter().zip(probs).map(|(xi, p)| xi * p).sum();
    (mass - 1.0).abs() <= tol
}

/// `Σ ξ(ω)·P(ω)·v(ω)`.
pub fn weighted_expectation(w: &EnvelopeWeights, probs: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(w.weights.len(), probs.len());
    debug_assert_eq!(probs.len(), values.len());
    w.weights
        .iter()
        .zip(probs)
        .zip(values)
        .map(|((xi, p), v)| xi * p * v)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform4() -> DiscreteDistribution {
        DiscreteDistribution::new(vec![(1.0, 0.25), (2.0, 0.25), (3.0, 0.25), (4.0, 0.25)]).unwrap()
    }

    #[test]
    fn cvar_examples() {
        let d = uniform4();
        assert!((cvar(&d, 0.5).unwrap() - 3.5).abs() < 1e-12);
        assert!((cvar(&d, 1.0).unwrap() - 2.5).abs() < 1e-12);
        let point = DiscreteDistribution::new(vec![(7.0, 1.0)]).unwrap();
        for a in [0.01, 0.3, 1.0] {
            assert!((cvar(&point, a).unwrap() - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cvar_dual_examples() {
        let d = uniform4();
        assert!((cvar_dual(&d, 0.5).unwrap() - 3.5).abs() < 1e-12);
        assert!((cvar_dual(&d, 1.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((cvar_dual(&d, 0.25).unwrap() - 4.0).abs() < 1e-12);
        assert!((cvar_dual(&d, 0.1).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bad_alpha_is_domain_error() {
        let d = uniform4();
        assert!(matches!(cvar(&d, 0.0), Err(Error::Domain(_))));
        assert!(matches!(cvar_dual(&d, 1.5), Err(Error::Domain(_))));
        assert!(matches!(cvar_of_samples(&[], 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_distribution_rejected() {
        assert!(matches!(
            DiscreteDistribution::new(vec![]),
            Err(Error::Domain(_))
        ));
        assert!(DiscreteDistribution::new(vec![(1.0, 0.5), (2.0, 0.4)]).is_err());
    }

    #[test]
    fn mixture_levels_examples() {
        assert_eq!(mixture_risk_levels(0.0, 0.3), RiskLevels { x: 1.0, y: 1.0 });
        let l = mixture_risk_levels(1.0, 0.1);
        assert!((l.x - 0.5).abs() < 1e-15 && (l.y - 2.0 / 11.0).abs() < 1e-15);
        let l = mixture_risk_levels(2.0, 1.0);
        assert!((l.x - 1.0 / 3.0).abs() < 1e-15 && (l.y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn feasibility_examples() {
        let half = RiskLevels::new(0.5, 0.5).unwrap();
        let p = [0.5, 0.5];
        assert!(envelope_feasible(
            &EnvelopeWeights::ones(2),
            &p,
            half,
            ENVELOPE_TOL
        ));
        assert!(envelope_feasible(
            &vec![0.5, 1.5].into(),
            &p,
            half,
            ENVELOPE_TOL
        ));
        assert!(!envelope_feasible(
            &vec![0.4, 1.6].into(),
            &p,
            half,
            ENVELOPE_TOL
        ));
        assert!(!envelope_feasible(
            &vec![0.6, 1.5].into(),
            &p,
            half,
            ENVELOPE_TOL
        ));
    }

    #[test]
    fn weighted_expectation_examples() {
        let p = [0.5, 0.5];
        let w: EnvelopeWeights = vec![0.5, 1.5].into();
        assert!((weighted_expectation(&w, &p, &[0.0, 10.0]) - 7.5).abs() < 1e-12);
        assert!(
            (weighted_expectation(&EnvelopeWeights::ones(2), &p, &[2.0, 6.0]) - 4.0).abs() < 1e-12
        );
        assert!((weighted_expectation(&w, &p, &[3.0, 3.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_max_matches_weighted_example() {
        let d = DiscreteDistribution::new(vec![(0.0, 0.5), (10.0, 0.5)]).unwrap();
        assert!((envelope_max(&d, 0.5, 2.0).unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn risk_levels_validation() {
        assert!(RiskLevels::new(0.0, 0.5).is_err());
        assert!(RiskLevels::new(0.5, 1.2).is_err());
        assert!(RiskLevels::new(1.0, 0.2).unwrap().is_degenerate());
        assert!(!RiskLevels::new(0.5, 0.2).unwrap().is_degenerate());
    }
}
