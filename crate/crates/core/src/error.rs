use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("nonlinearity {name} returned a non-finite value at u = {u}")]
    NonFinite { name: String, u: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("profile is not monotone near xi = {at}")]
    NotMonotone { at: f64 },

    #[error("tail remainder does not decay on the fit window: {0}")]
    TailNotDecaying(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular linear system at row {row}")]
    Singular { row: usize },

    #[error("ill-conditioned regression (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("no level crossing for s = {level}")]
    NoCrossing { level: f64 },

    #[error("invariant violated at t = {t}: {detail}")]
    InvariantViolation { t: f64, detail: String },

    #[error("non-finite solution value at t = {t}")]
    NanDetected { t: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
