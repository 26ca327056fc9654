use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("quadrature did not converge at |xi| = {xi}: last estimates {prev} and {last}")]
    Quadrature { xi: f64, prev: f64, last: f64 },

    #[error("under-resolved: {0}")]
    Resolution(String),

    #[error("no admissible local window above dt = {dt} (C0(dt) = {c0})")]
    NoWindow { dt: f64, c0: f64 },

    #[error("picard iteration did not converge in {iters} iterations (last residual {residual:e})")]
    Picard { iters: usize, residual: f64 },

    #[error("step bound violated: {0}")]
    StepBound(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no admissible zeta up to 2^{max_log2}: {blocking}")]
    Infeasible { max_log2: u32, blocking: String },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}
