//! Monte Carlo estimation of the weighted objective
//! `E[AoI] + η·CVaR_α(AoI) + ν·E[energy]` for any [`Controller`], with a seeded
//! nonparametric bootstrap for its uncertainty.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::mdp::AoiState;
use crate::risk::{cvar_of_samples, qscan_sorted};
use crate::runtime::{run_episode, Controller};
use crate::seed::derive_seed;

/// Per-episode discounted totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub aoi_samples: Vec<f64>,
    pub energy_samples: Vec<f64>,
    pub n: usize,
    pub horizon: usize,
    pub base_seed: u64,
}

/// Runs `n_episodes` rollouts from `(1,1)` with seeds `base_seed + i`.
pub fn simulate_many<C: Controller + ?Sized>(
    policy: &C,
    cfg: &SystemConfig,
    n_episodes: usize,
    horizon: usize,
    base_seed: u64,
) -> Result<EpisodeStats> {
    simulate_many_from(
        policy,
        cfg,
        AoiState::new(1, 1),
        n_episodes,
        horizon,
        base_seed,
    )
}

pub fn simulate_many_from<C: Controller + ?Sized>(
    policy: &C,
    cfg: &SystemConfig,
    start: AoiState,
    n_episodes: usize,
    horizon: usize,
    base_seed: u64,
) -> Result<EpisodeStats> {
    if n_episodes < 1 {
        return Err(Error::Domain("need at least one episode".into()));
    }
    if horizon < 1 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    if !start.is_valid(cfg) {
        return Err(Error::Domain(format!("start state {start} invalid")));
    }
    let mut aoi_samples = Vec::with_capacity(n_episodes);
    let mut energy_samples = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let t = run_episode(
            policy,
            cfg,
            start,
            horizon,
            base_seed.wrapping_add(i as u64),
            None,
        )?;
        aoi_samples.push(t.aoi);
        energy_samples.push(t.energy);
    }
    Ok(EpisodeStats {
        aoi_samples,
        energy_samples,
        n: n_episodes,
        horizon,
        base_seed,
    })
}

/// Plug-in CVaR of the empirical measure.
pub fn empirical_cvar(samples: &[f64], alpha: f64) -> Result<f64> {
    cvar_of_samples(samples, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub seed: u64,
}

impl BootstrapSettings {
    /// 1000 resamples on the `"bootstrap"` stream of `base_seed`.
    pub fn for_base_seed(base_seed: u64) -> Self {
        Self {
            resamples: 1000,
            seed: derive_seed(base_seed, "bootstrap"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveEstimate {
    pub mean_aoi: f64,
    pub cvar_aoi: f64,
    pub mean_energy: f64,
    pub objective: f64,
    /// 95% percentile-bootstrap interval for `objective`.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Standard deviation of the bootstrap replicates.
    pub std_error: f64,
}

/// Point estimate and bootstrap interval with [`BootstrapSettings::for_base_seed`].
pub fn empirical_objective(stats: &EpisodeStats, cfg: &SystemConfig) -> Result<ObjectiveEstimate> {
    empirical_objective_with(
        stats,
        cfg,
        BootstrapSettings::for_base_seed(stats.base_seed),
    )
}

pub fn empirical_objective_with(
    stats: &EpisodeStats,
    cfg: &SystemConfig,
    boot: BootstrapSettings,
) -> Result<ObjectiveEstimate> {
    let n = stats.aoi_samples.len();
    if n == 0 || stats.energy_samples.len() != n {
        return Err(Error::Domain(
            "episode statistics are empty or ragged".into(),
        ));
    }
    let weighted = Weighted::new(stats, cfg);
    let ones = vec![1u32; n];
    let (mean_aoi, cvar_aoi, mean_energy, objective) = weighted.evaluate(&ones);

    let mut rng = ChaCha8Rng::seed_from_u64(boot.seed);
    let mut replicates = Vec::with_capacity(boot.resamples);
    let mut counts = vec![0u32; n];
    for _ in 0..boot.resamples {
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        replicates.push(weighted.evaluate(&counts).3);
    }
    let (ci_low, ci_high, std_error) = if replicates.is_empty() {
        (objective, objective, 0.0)
    } else {
        replicates.sort_by(f64::total_cmp);
        let mean = replicates.iter().sum::<f64>() / replicates.len() as f64;
        let var = replicates.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / (replicates.len().max(2) - 1) as f64;
        (
            quantile_sorted(&replicates, 0.025),
            quantile_sorted(&replicates, 0.975),
            var.sqrt(),
        )
    };
    Ok(ObjectiveEstimate {
        mean_aoi,
        cvar_aoi,
        mean_energy,
        objective,
        ci_low,
        ci_high,
        std_error,
    })
}

/// Samples ordered by AoI and shifted by their minima, so resamples only
/// change multiplicities and constant samples stay exact.
struct Weighted<'a> {
    order: Vec<usize>,
    aoi: Vec<f64>,
    energy: Vec<f64>,
    aoi_shift: f64,
    energy_shift: f64,
    cfg: &'a SystemConfig,
}

impl<'a> Weighted<'a> {
    fn new(stats: &EpisodeStats, cfg: &'a SystemConfig) -> Self {
        let aoi_shift = stats
            .aoi_samples
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let energy_shift = stats
            .energy_samples
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let aoi: Vec<f64> = stats.aoi_samples.iter().map(|v| v - aoi_shift).collect();
        let energy: Vec<f64> = stats
            .energy_samples
            .iter()
            .map(|v| v - energy_shift)
            .collect();
        let mut order: Vec<usize> = (0..aoi.len()).collect();
        order.sort_by(|&a, &b| aoi[a].total_cmp(&aoi[b]));
        Self {
            order,
            aoi,
            energy,
            aoi_shift,
            energy_shift,
            cfg,
        }
    }

    /// `(mean_aoi, cvar_aoi, mean_energy, objective)` with multiplicities `counts`.
    fn evaluate(&self, counts: &[u32]) -> (f64, f64, f64, f64) {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let total = total as f64;
        let mut atoms = Vec::with_capacity(self.order.len());
        let (mut sa, mut se) = (0.0, 0.0);
        for &i in &self.order {
            let c = counts[i];
            if c == 0 {
                continue;
            }
            let w = f64::from(c) / total;
            atoms.push((self.aoi[i], w));
            sa += w * self.aoi[i];
            se += w * self.energy[i];
        }
        let mean_aoi = sa + self.aoi_shift;
        let mean_energy = se + self.energy_shift;
        let cvar = if self.cfg.alpha == 1.0 {
            sa
        } else {
            qscan_sorted(&atoms, self.cfg.alpha)
        } + self.aoi_shift;
        let objective = mean_aoi + self.cfg.eta * cvar + self.cfg.nu * mean_energy;
        (mean_aoi, cvar, mean_energy, objective)
    }
}

/// Linear-interpolation quantile of ascending `sorted`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * t
}

/// JSON summary: `{"mean_aoi", "cvar_aoi", "mean_energy", "objective", "ci": [lo, hi],
/// "std_error", "n", "horizon", "seed"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub mean_aoi: f64,
    pub cvar_aoi: f64,
    pub mean_energy: f64,
    pub objective: f64,
    pub ci: [f64; 2],
    pub std_error: f64,
    pub n: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl SimulationSummary {
    pub fn new(stats: &EpisodeStats, est: &ObjectiveEstimate) -> Self {
        Self {
            mean_aoi: est.mean_aoi,
            cvar_aoi: est.cvar_aoi,
            mean_energy: est.mean_energy,
            objective: est.objective,
            ci: [est.ci_low, est.ci_high],
            std_error: est.std_error,
            n: stats.n,
            horizon: stats.horizon,
            seed: stats.base_seed,
        }
    }
}
