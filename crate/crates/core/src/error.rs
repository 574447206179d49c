use thiserror::Error;

/// Errors raised by the estimation chain and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("strongest-path SNR floor not met for user {user} after {attempts} draws")]
    ResampleExhausted { user: usize, attempts: usize },

    #[error("pilot Gram matrix is singular (condition number {condition:.3e})")]
    SingularPilotGram { condition: f64 },

    #[error("odd angular window extent {0}; only even extents are supported")]
    InvalidWindow(usize),

    #[error("numerical divergence at iteration {iteration}: {what}")]
    NumericalDivergence { iteration: usize, what: String },

    #[error("stage 1 produced no angular windows")]
    EmptyPlan,

    #[error("group {group}: {source}")]
    Group {
        group: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fixed point did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("iterate left the physical range: {0}")]
    NonPhysical(String),

    #[error("quadrature unstable: orders {low} and {high} disagree ({low_value:.12e} vs {high_value:.12e})")]
    QuadratureUnstable {
        low: usize,
        high: usize,
        low_value: f64,
        high_value: f64,
    },

    #[error("reference has zero norm")]
    ZeroReference,

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
