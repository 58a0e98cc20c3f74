//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by solvers, samplers, and input validation.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent model dimensions (type counts, basis lengths, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// The equilibrium solver failed to converge.
    #[error(
        "equilibrium solve failed for configuration {config:?} (reserve {reserve}): {reason}; \
         residual {residual:.3e} after {iterations} iterations"
    )]
    SolveFailed {
        config: Vec<u32>,
        reserve: f64,
        reason: String,
        residual: f64,
        iterations: usize,
    },

    /// A reserve left (numerically) no cost mass below it.
    #[error("reserve {rho} leaves negligible cost mass ({mass:.3e}) for type {tau}")]
    EmptyTruncation { rho: f64, mass: f64, tau: usize },

    /// Chain initialisation could not find a feasible latent scale.
    #[error("no feasible latent scale for procurements {procurements:?} at any trial risk parameter")]
    InitInfeasible { procurements: Vec<String> },

    /// A linear system was numerically singular.
    #[error("singular system (condition estimate {cond:.3e})")]
    Singular { cond: f64 },

    /// Input data violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
