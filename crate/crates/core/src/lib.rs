//! Risk-aware scheduling of status updates over an unreliable link.
//!
//! A device receives fresh updates at random and decides each slot whether to
//! spend energy transmitting its current one to a receiver. The objective mixes
//! the expected discounted age of information at the receiver, its CVaR, and
//! the expected energy spent. The CVaR part is handled by augmenting the AoI
//! state with two risk levels and solving a Bellman recursion over envelope
//! reweightings of the transition kernel.

pub mod baseline;
pub mod config;
pub mod error;
pub mod export;
pub mod grid;
pub mod mdp;
pub mod oracle;
pub mod risk;
pub mod runtime;
pub mod seed;
pub mod sim;
pub mod solver;

pub use baseline::{evaluate_stationary, risk_neutral_value_iteration, StationaryPolicy};
pub use config::{ConfigFile, GridMode, InnerSearch, Interpolation, SolverSettings, SystemConfig};
pub use error::{Error, Result};
pub use grid::{build_risk_grid, RiskGrid};
pub use mdp::{transition_row, Action, AoiState, StateSpace, TransitionRow};
pub use risk::{
    cvar, cvar_dual, mixture_risk_levels, DiscreteDistribution, EnvelopeWeights, RiskLevels,
};
pub use runtime::{rollout, Controller, EpisodeRecord};
pub use solver::{value_iteration, AugmentedPolicy, ConvergenceReport, Solution, ValueTable};
