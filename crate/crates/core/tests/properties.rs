use std::sync::Arc;

use aoirisk::baseline::{evaluate_stationary, StationaryPolicy};
use aoirisk::grid::build_risk_grid;
use aoirisk::mdp::{enumerate_states, step_state, transition_row, Action, AoiState, StateSpace};
use aoirisk::oracle::{enumerate_paths, exact_objective};
use aoirisk::risk::{
    cvar, cvar_dual, cvar_dual_weights, envelope_feasible, envelope_max, mixture_risk_levels,
    DiscreteDistribution, RiskLevels,
};
use aoirisk::runtime::advance_levels;
use aoirisk::solver::{bellman_sweep, ValueTable};
use aoirisk::{GridMode, Interpolation, SolverSettings, SystemConfig};
use proptest::prelude::*;

fn config() -> impl Strategy<Value = SystemConfig> {
    (
        0.0..=1.0f64,
        0.0..=1.0f64,
        0.05..0.95f64,
        0.0..3.0f64,
        0.0..2.0f64,
        0.05..=1.0f64,
        1u32..5,
        0u32..4,
    )
        .prop_map(
            |(lambda, p, gamma, eta, nu, alpha, cd, extra)| SystemConfig {
                lambda,
                p,
                energy_cost: 1.0,
                gamma,
                eta,
                nu,
                alpha,
                cap_device: cd,
                cap_receiver: cd + extra,
            },
        )
}

/// Probabilities from positive raw weights, with the last atom absorbing rounding.
fn normalize(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|r| r / s).collect();
    let head: f64 = p[..p.len() - 1].iter().sum();
    let last = p.len() - 1;
    p[last] = 1.0 - head;
    p
}

fn distribution() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=16).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0..50.0f64, n),
            prop::collection::vec(0.01..1.0f64, n),
        )
            .prop_map(|(v, raw)| (v, normalize(&raw)))
    })
}

fn dist(values: &[f64], probs: &[f64]) -> DiscreteDistribution {
    DiscreteDistribution::new(values.iter().copied().zip(probs.iter().copied()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernel_rows_are_distributions(cfg in config()) {
        for s in enumerate_states(&cfg) {
            for a in Action::ALL {
                let row = transition_row(s, a, &cfg).unwrap();
                let total: f64 = row.probs().iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(row.entries().windows(2).all(|w| w[0].0 < w[1].0));
                for &(t, p) in row.entries() {
                    prop_assert!(p > 0.0);
                    prop_assert!(t.is_valid(&cfg));
                }
            }
        }
    }

    #[test]
    fn kernel_matches_sampled_dynamics(cfg in config()) {
        for s in enumerate_states(&cfg) {
            for a in Action::ALL {
                let row = transition_row(s, a, &cfg).unwrap();
                for arrival in [false, true] {
                    for delivery in [false, true] {
                        let pa = if arrival { cfg.lambda } else { 1.0 - cfg.lambda };
                        let pd = match (a, delivery) {
                            (Action::Idle, false) => 1.0,
                            (Action::Idle, true) => 0.0,
                            (Action::Transmit, true) => cfg.p,
                            (Action::Transmit, false) => 1.0 - cfg.p,
                        };
                        if pa * pd > 0.0 {
                            let t = step_state(s, a, arrival, delivery && a.is_transmit(), &cfg).unwrap();
                            prop_assert!(row.prob_of(t) >= pa * pd - 1e-15);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cvar_primal_equals_dual((values, probs) in distribution(), alpha in 0.001..=1.0f64) {
        let d = dist(&values, &probs);
        let a = cvar(&d, alpha).unwrap();
        let b = cvar_dual(&d, alpha).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        let w = cvar_dual_weights(&d, alpha).unwrap();
        let envelope = RiskLevels { x: 0.0, y: alpha };
        prop_assert!(envelope_feasible(&w, &probs, envelope, 1e-9));
    }

    #[test]
    fn cvar_between_mean_and_max((values, probs) in distribution(), alpha in 0.001..=1.0f64) {
        let d = dist(&values, &probs);
        let c = cvar(&d, alpha).unwrap();
        prop_assert!(c >= d.mean() - 1e-9);
        prop_assert!(c <= d.max_value() + 1e-9);
    }

    #[test]
    fn cvar_coherence(
        (values, probs) in distribution(),
        bumps in prop::collection::vec(0.0..10.0f64, 16),
        other in prop::collection::vec(-50.0..50.0f64, 16),
        shift in -20.0..20.0f64,
        scale in 0.0..10.0f64,
        alpha in 0.001..=1.0f64,
    ) {
        let n = values.len();
        let z = dist(&values, &probs);
        let cz = cvar(&z, alpha).unwrap();

        let bumped: Vec<f64> = values.iter().zip(&bumps).map(|(v, b)| v + b).collect();
        prop_assert!(cvar(&dist(&bumped, &probs), alpha).unwrap() >= cz - 1e-9);

        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        prop_assert!((cvar(&dist(&shifted, &probs), alpha).unwrap() - (cz + shift)).abs() <= 1e-9);

        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        prop_assert!((cvar(&dist(&scaled, &probs), alpha).unwrap() - scale * cz).abs() <= 1e-9 * (1.0 + scale * cz.abs()));

        let w = &other[..n];
        let sum: Vec<f64> = values.iter().zip(w).map(|(a, b)| a + b).collect();
        let lhs = cvar(&dist(&sum, &probs), alpha).unwrap();
        let rhs = cz + cvar(&dist(w, &probs), alpha).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn mixture_objective_is_a_single_envelope(
        (values, probs) in distribution(),
        eta in 0.0..10.0f64,
        alpha in 0.001..=1.0f64,
    ) {
        let d = dist(&values, &probs);
        let lhs = d.mean() + eta * cvar(&d, alpha).unwrap();
        let l = mixture_risk_levels(eta, alpha);
        let rhs = (1.0 + eta) * envelope_max(&d, l.lower(), l.upper()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn level_updates_conserve_product(
        x in 1e-3..=1.0f64,
        y in 1e-3..=1.0f64,
        t in 0.0..=1.0f64,
        steps in 1usize..50,
    ) {
        let mut l = RiskLevels::new(x, y).unwrap();
        let c = l.product();
        for _ in 0..steps {
            let xi = l.lower() + t * (l.upper() - l.lower());
            l = advance_levels(l, xi).unwrap();
            prop_assert!(l.x > 0.0 && l.x <= 1.0 && l.y > 0.0 && l.y <= 1.0);
            prop_assert!((l.product() - c).abs() <= 1e-12);
        }
    }
}

fn operator_instance() -> (
    SystemConfig,
    SolverSettings,
    Arc<aoirisk::RiskGrid>,
    Arc<StateSpace>,
) {
    let cfg = SystemConfig {
        lambda: 0.5,
        p: 0.7,
        energy_cost: 1.0,
        gamma: 0.8,
        eta: 1.0,
        nu: 0.1,
        alpha: 0.3,
        cap_device: 2,
        cap_receiver: 3,
    };
    let settings = SolverSettings {
        inner_grid_points: 17,
        grid_points: 9,
        interpolation: Interpolation::NearestNode,
        ..SolverSettings::default()
    };
    let levels0 = mixture_risk_levels(cfg.eta, cfg.alpha);
    let grid = build_risk_grid(levels0, settings.grid_points, GridMode::Manifold1D)
        .unwrap()
        .snapped(levels0);
    (
        cfg,
        settings,
        Arc::new(grid),
        Arc::new(StateSpace::new(&cfg)),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operator_is_monotone_and_shift_equivariant(
        seed_vals in prop::collection::vec(0.0..30.0f64, 64),
        bumps in prop::collection::vec(0.0..5.0f64, 64),
        shift in 0.0..10.0f64,
    ) {
        let (cfg, settings, grid, space) = operator_instance();
        let n = grid.len() * space.len();
        let v = ValueTable::from_fn(grid.clone(), space.clone(), |s, k| seed_vals[(s * grid.len() + k) % 64]);
        let w = ValueTable::from_fn(grid.clone(), space.clone(), |s, k| {
            let i = (s * grid.len() + k) % 64;
            seed_vals[i] + bumps[i]
        });
        prop_assert_eq!(v.values().len(), n);
        let (tv, _, _) = bellman_sweep(&v, &cfg, &settings).unwrap();
        let (tw, _, _) = bellman_sweep(&w, &cfg, &settings).unwrap();
        for (a, b) in tv.values().iter().zip(tw.values()) {
            prop_assert!(*a <= *b + 1e-9);
        }
        let (ts, _, _) = bellman_sweep(&v.map(|x| x + shift), &cfg, &settings).unwrap();
        for (a, b) in tv.values().iter().zip(ts.values()) {
            prop_assert!((b - a - cfg.gamma * shift).abs() <= 1e-9);
        }
        let (tv2, _, _) = bellman_sweep(&w, &cfg, &settings).unwrap();
        prop_assert!(tv.sup_distance(&tv2) <= cfg.gamma * v.sup_distance(&w) + 1e-9);
    }
}

/// Mean of the enumerated path law equals the horizon-truncated policy
/// evaluation computed by a separate backward recursion.
#[test]
fn path_enumeration_matches_backward_recursion() {
    let cfg = SystemConfig {
        lambda: 0.4,
        p: 0.6,
        energy_cost: 2.0,
        gamma: 0.7,
        eta: 0.0,
        nu: 0.3,
        alpha: 1.0,
        cap_device: 2,
        cap_receiver: 3,
    };
    let space = StateSpace::new(&cfg);
    let policy = StationaryPolicy::new(
        space
            .states()
            .iter()
            .map(|&s| {
                (
                    s,
                    if s.a_r > s.a_d {
                        Action::Transmit
                    } else {
                        Action::Idle
                    },
                )
            })
            .collect(),
    );
    let h = 6;
    // Backward recursion: V_h ≡ 0, V_t = cost + γ·P·V_{t+1}.
    let mut aoi = vec![0.0; space.len()];
    let mut energy = vec![0.0; space.len()];
    for _ in 0..h {
        let mut na = vec![0.0; space.len()];
        let mut ne = vec![0.0; space.len()];
        for (i, &s) in space.states().iter().enumerate() {
            let a = policy.action(s).unwrap();
            let row = transition_row(s, a, &cfg).unwrap();
            let ea: f64 = row
                .entries()
                .iter()
                .map(|&(t, p)| p * aoi[space.index(t).unwrap()])
                .sum();
            let ee: f64 = row
                .entries()
                .iter()
                .map(|&(t, p)| p * energy[space.index(t).unwrap()])
                .sum();
            na[i] = f64::from(s.a_r) + cfg.gamma * ea;
            ne[i] = if a.is_transmit() {
                cfg.energy_cost
            } else {
                0.0
            } + cfg.gamma * ee;
        }
        aoi = na;
        energy = ne;
    }
    for &s in space.states() {
        let d = enumerate_paths(&policy, &cfg, h, s).unwrap();
        let i = space.index(s).unwrap();
        assert!((d.mean_aoi() - aoi[i]).abs() < 1e-10);
        assert!((d.mean_energy() - energy[i]).abs() < 1e-10);
        let obj = exact_objective(&d, &cfg).unwrap();
        assert!((obj.objective - (aoi[i] + cfg.nu * energy[i])).abs() < 1e-10);
    }

    // The infinite-horizon evaluation dominates the truncated one by at most the tail bound.
    let (states, inf_aoi, _) = evaluate_stationary(&cfg, &policy, 1e-12).unwrap();
    let i = states
        .iter()
        .position(|&s| s == AoiState::new(1, 1))
        .unwrap();
    let tail = cfg.gamma.powi(h as i32) / (1.0 - cfg.gamma) * f64::from(cfg.cap_receiver);
    let j = space.index(AoiState::new(1, 1)).unwrap();
    assert!(inf_aoi[i] >= aoi[j] - 1e-9 && inf_aoi[i] <= aoi[j] + tail + 1e-9);
}
