use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operator symbol does not have constant rank")]
    NonConstantRank,

    #[error("trivial operator: the symbol vanishes identically")]
    TrivialOperator,

    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    #[error("grid incompatibility: {0}")]
    Grid(String),

    #[error("invalid density: {0}")]
    Density(String),

    #[error("hypothesis {hypothesis} violated: {detail}")]
    Hypothesis { hypothesis: String, detail: String },

    #[error("solver did not converge after {iterations} iterations (relative decrease {decrease:.3e})")]
    NonConvergence { iterations: usize, decrease: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid quartet: {0}")]
    Quartet(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
