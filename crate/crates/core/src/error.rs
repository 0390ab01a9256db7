use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate ball: no grid node inside B({radius}) at {center:?}")]
    DegenerateBall { center: [f64; 2], radius: f64 },

    #[error("degenerate normalizer: phi(x0, {sigma}) = 0")]
    DegenerateNormalizer { sigma: f64 },

    #[error("regularization failed: {0}")]
    Regularization(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
