use thiserror::Error;

pub type Result<T> = std::result::Result<T, EdmError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EdmError {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("payoff evaluation produced a non-finite value at strategy {strategy}")]
    NonFinitePayoff { strategy: usize },

    /// The off-diagonal switch rates of a row exceed the protocol's rate budget.
    #[error("negative stay rate {stay_rate} for strategy {strategy} (rate budget {rate_budget})")]
    NegativeStayRate {
        strategy: usize,
        stay_rate: f64,
        rate_budget: f64,
    },

    #[error("operation requires an impartial pairwise comparison protocol")]
    NotImpartial,

    #[error("game is not strictly contractive (gamma_lower = {gamma_lower})")]
    NonContractive { gamma_lower: f64 },

    #[error("invalid sub-strategy count m = {0}")]
    InvalidOrder(usize),

    #[error("{what} = {value} is outside the supported range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("step size control failed at t = {t} (h = {step})")]
    StepFailure { t: f64, step: f64 },

    #[error("congestion network has no routes")]
    EmptyRoutes,

    #[error("route {route} is empty")]
    EmptyRoute { route: usize },

    #[error("link {link} referenced by route {route} does not exist")]
    UnknownLink { route: usize, link: usize },

    #[error("link {link} has nonpositive cost coefficient {cost}")]
    NonpositiveCost { link: usize, cost: f64 },
}
