use thiserror::Error;

use crate::expr::ParseError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown corpus system `{0}`")]
    NotFound(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("field evaluation produced a non-finite value at t={t}, x={x:?}")]
    FieldEvaluation { t: f64, x: Vec<f64> },

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("perturbation generation failed: {0}")]
    Generation(String),

    #[error("invalid integrator configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
