use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("quadrature order {0} out of range 1..=512")]
    QuadratureOrder(usize),

    /// `u` sits on the edge of the support of the self-overlap; use the
    /// boundary evaluation instead of the interior solver.
    #[error("u = {u} is not strictly inside ({d}, {big_d}); use boundary_value")]
    Boundary { u: f64, d: f64, big_d: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("enumeration of {0} configurations exceeds the budget")]
    BudgetExceeded(f64),

    #[error("finite-difference step underflow: {0}")]
    StepUnderflow(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
