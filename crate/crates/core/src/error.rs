use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A current or power outside a module's operating range.
    #[error("{quantity} {value} is outside the range [{lo}, {hi}] of module `{module}`")]
    Range {
        module: String,
        quantity: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// The fitted or supplied power model violates a profile invariant.
    #[error("invalid model for module `{module}`: {reason}")]
    Model { module: String, reason: String },

    #[error("dP_in/dI vanishes at I = {current} A for module `{module}`")]
    Singular { module: String, current: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("least-squares design matrix is rank deficient at degree {degree}")]
    Conditioning { degree: usize },

    #[error("demand {demand} W is infeasible: feasible range is [{lo}, {hi}] W")]
    Infeasible { demand: f64, lo: f64, hi: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(
        "no real phase shift at k = {k}, p = {p}: {expression} has negative radicand {radicand}"
    )]
    Domain {
        k: f64,
        p: f64,
        expression: &'static str,
        radicand: f64,
    },

    #[error("{0}")]
    Capability(String),
}

impl Error {
    pub(crate) fn model(module: &str, reason: impl Into<String>) -> Self {
        Error::Model {
            module: module.to_string(),
            reason: reason.into(),
        }
    }
}
