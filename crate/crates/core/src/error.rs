use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("value grid was solved for model {grid}, record comes from model {model}")]
    ModelMismatch { grid: String, model: String },

    #[error("value grid has not been solved")]
    Unsolved,

    #[error("population exceeded the cap of {0} particles")]
    PopulationCap(usize),

    #[error("discretization is not monotone at node {node}")]
    NonMonotone { node: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
