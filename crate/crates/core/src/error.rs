use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("frequency {re}+{im}i lies in the lower half-plane")]
    LowerHalfPlane { re: f64, im: f64 },
    #[error("Newton iteration did not converge after {iters} steps (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("iterate came within {distance:e} of a pole of kappa*")]
    PoleProximity { distance: f64 },
    #[error("growth factor exp({exponent}) exceeds the allowed budget")]
    GrowthBudgetExceeded { exponent: f64 },
    #[error("input spectrum is not even in its first axis (asymmetry {0:e})")]
    EvennessViolation(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("source quadrature too coarse: refinement changed output by {0:e}")]
    QuadratureTooCoarse(f64),
    #[error("series truncation not converged: last term ratio {0:e}")]
    TruncationNotConverged(f64),
    #[error("kernel series not converged: tail ratio {0:e}")]
    SeriesNotConverged(f64),
    #[error("iteration not converged after {} steps (last residual {:e})", .residuals.len(), .residuals.last().copied().unwrap_or(f64::NAN))]
    NotConverged { residuals: Vec<f64> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("file format error: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
