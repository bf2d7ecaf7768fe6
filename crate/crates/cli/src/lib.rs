//! Scenario files and the runners behind the `erlang-edm` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
pub mod harness;
pub mod scenario;

pub use error::CliError;
pub use harness::{run_agents, run_lyapunov, run_ode, run_stability, AgentsSummary, LyapunovSummary, OdeSummary};
pub use scenario::Scenario;
