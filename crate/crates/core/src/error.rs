use thiserror::Error;

/// Failure modes shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("not normally hyperbolic attracting: grid max of D_u f is {max:.6e} (must be < 0)")]
    NotNormallyHyperbolic { max: f64 },

    #[error("implicit function theorem hypothesis violated: {0}")]
    ImplicitFunction(String),

    #[error("blow-up at t = {t:.6e}: {reason}")]
    BlowUp { t: f64, reason: String },

    #[error(
        "zeta too large: the bracketing selects k0 = 0 (zeta^-1 (eps*omega_A + lambda0) = {0:.6e})"
    )]
    ZetaTooLarge(f64),

    #[error("splitting inconsistent: {0}")]
    SplittingInconsistent(String),

    #[error("backward horizon too short: tail bound {bound:.3e} exceeds tolerance {tol:.3e}")]
    HorizonTooShort { bound: f64, tol: f64 },

    #[error("fixed-point iteration diverged after {iterations} iterations: {reason}")]
    Divergence {
        iterations: usize,
        reason: String,
        increments: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
