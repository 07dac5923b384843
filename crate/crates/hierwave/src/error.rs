//! Error taxonomy shared by all solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or configuration value violates its contract.
    #[error("config error: {0}")]
    Config(String),

    /// A scalar argument lies outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Array shapes do not match the grid they claim to live on.
    #[error("shape error: {0}")]
    Shape(String),

    /// A call violates an API contract (masks, boundary values, pairing).
    #[error("contract error: {0}")]
    Contract(String),

    /// The explicit scheme produced non-finite values.
    #[error("instability: non-finite value detected at time step {step}")]
    Instability { step: usize },

    /// An iterative solver ran out of iterations. Carries the residual history.
    #[error("{solver} did not converge in {iterations} iterations (last residual {last:.3e}): {advice}")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        last: f64,
        advice: String,
        residuals: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
