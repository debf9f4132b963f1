//! Bayesian Gaussian mixtures.
//!
//! - [`Gmm`]: unit observation variance, uniform mixing weights, and
//!   N(0, σ²) priors on every coordinate of every component mean. With
//!   one-dimensional data this is the textbook model fit by the classic
//!   two-step CAVI loop; `d`-dimensional data factor per coordinate.
//! - [`DiagGmm`]: Dirichlet mixing weights and a normal-gamma prior per
//!   component and coordinate (diagonal precision).
//! - [`simulate`]: seeded synthetic clusters.

mod diag;
mod simulate;
mod unit;

pub use diag::{
    diag_gmm_elbo, diag_gmm_sweep, diag_predictive_log_density, DiagGmm, DiagGmmConfig, DiagGmmState, NormalGammaParams,
};
pub use simulate::{min_pairwise_distance, permutation_accuracy, simulate, Simulation, SimulationConfig};
pub use unit::{
    gmm_elbo, predictive_log_density, update_assignments, update_components, Gmm, GmmConfig, GmmExpectations,
    GmmState,
};
