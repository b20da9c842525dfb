//! Error taxonomy shared by every module.
//!
//! Construction errors ([`Error::InvalidModel`]) come from violated model
//! invariants; evaluation errors cover argument-domain violations, numerical
//! breakdown in root finding or quadrature, and preconditions such as the
//! net-profit condition that individual identities require.

use thiserror::Error;

/// Everything that can go wrong when building a model or evaluating an identity.
#[derive(Debug, Error)]
pub enum Error {
    /// A model invariant is violated (bad weights, non-increasing rates, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The Laplace exponent was evaluated too close to a pole at -alpha_i.
    #[error("argument {lambda} is within {eps} of the pole at {pole}")]
    PoleProximity { lambda: f64, pole: f64, eps: f64 },

    /// Roots of psi - q cannot be extracted (double root at 0 when q = 0 and
    /// the process is driftless on average).
    #[error("degenerate root configuration: {0}")]
    DegenerateRoots(String),

    /// The refraction removes all of the drift of a bounded-variation model.
    #[error("refraction rate alpha={alpha} must be strictly less than the drift c={c} for sigma=0 (alpha < c)")]
    RefractionTooLarge { alpha: f64, c: f64 },

    /// An identity that requires mean(X) - alpha > 0 was evaluated without it.
    #[error("net profit condition violated: mean(X) - alpha = {excess} must be positive")]
    NetProfit { excess: f64 },

    /// Arguments violate the ordering a <= x <= c (or a <= b <= c) the
    /// exit identities assume.
    #[error("level ordering violated: {0}")]
    Ordering(String),

    /// The process has nonpositive mean where a positive mean is required.
    #[error("mean per unit time is {mean}, but a positive mean is required")]
    NonpositiveMean { mean: f64 },

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    /// A model family the evaluator cannot handle (e.g. degenerate sigma=0,
    /// eta=0 occupation density).
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
