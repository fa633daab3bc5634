use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh needs at least 2 elements, got {0}")]
    TooFewElements(usize),
    #[error("invalid mesh grading {0}: must be finite and >= 1")]
    InvalidGrading(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("field is zero (or has zero L^p mass); the Nehari ray is undefined")]
    DegenerateField,
    #[error("no admissible scaling found: {0}")]
    NoAdmissibleScaling(String),
    #[error("optimizer did not converge after {iterations} iterations (best objective {best_objective:e})")]
    NotConverged {
        iterations: usize,
        best_objective: f64,
        best_iterate: Vec<f64>,
    },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("non-positive energy {value:e} at t = {t} inside the fit window")]
    NonPositiveEnergy { t: f64, value: f64 },
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
