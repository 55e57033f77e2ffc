use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error(
        "numerical instability at t = {time}: frame minimum {min:e} below -1e-8; \
         use a smaller time step or a finer grid"
    )]
    Instability { time: f64, min: f64 },

    #[error("time step {h} exceeds transport cap {cap} (0.1 / sup|grad W|)")]
    StepTooLarge { h: f64, cap: f64 },

    #[error("Picard iteration did not converge after {} iterations (last residual {:e})",
        residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    PicardNonConvergence { residuals: Vec<f64> },

    #[error("initial condition is not deconvolvable: best c = {best_c:e}")]
    NotDeconvolvable { best_c: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error signals a violated invariant (mass, positivity, stability)
    /// rather than bad input or I/O.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, Error::Instability { .. } | Error::Invariant(_) | Error::PicardNonConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
