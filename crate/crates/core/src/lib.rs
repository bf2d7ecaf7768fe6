//! Erlang evolutionary dynamics for population games.
//!
//! Agents revise their strategy after an Erlang-distributed delay, modelled as
//! `m` exponential stages. The crate provides the mean-field vector field and
//! its integrator, an exact finite-population simulator, and the stability
//! certificate: contractivity margins, the H∞ gain of the stage-mismatch
//! system, the revision-rate threshold and Lyapunov diagnostics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod csv;
pub mod dynamics;
pub mod error;
pub mod games;
pub mod protocols;
pub mod simplex;
pub mod stability;
pub mod stats;
pub mod stochastic;

pub use dynamics::{
    convergence_report, integrate, standard_edm_field, vector_field, ConvergenceReport, EarlyStop, ErlangEdm,
    ErlangParams, Method, Sample, Sampling, SolverOptions, Trajectory,
};
pub use error::{EdmError, Result};
pub use games::{congestion_game, contractivity_margins, is_potential, linear_game, ContractivityMargins, FnGame, Game, LinearGame};
pub use protocols::{flow_generator, phi_matrix, switch_rate_matrix, ProtocolClass, RevisionProtocol, TabulatedRate};
pub use simplex::{
    aggregate, ene_residual, ne_residual, tilde, uniform_extension, ExtendedState, PayoffVector, PopulationState,
    TildeState,
};
pub use stability::{
    build_system_matrices, compute_c, lambda_lower_bound, lyapunov_value, pq_decomposition, sigma_bar_bisection,
    sigma_bar_closed_form, solve_lyapunov, stability_report, StabilityReport, SystemMatrices,
};
pub use stochastic::{init_population, simulate, simulate_replications, sup_deviation, AgentPopulation, StochasticRun};
