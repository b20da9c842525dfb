//! Closed-form fluctuation and occupation-time identities for refracted
//! spectrally negative Lévy risk processes, verified against an independent
//! Monte Carlo path simulator.
//!
//! The model family is mixed-exponential jump-diffusions: a linear drift plus
//! optional Brownian component minus a compound Poisson process with
//! hyperexponential jump sizes. For this family the scale functions are
//! finite exponential sums, so exit probabilities, time-in-the-red Laplace
//! transforms, bankruptcy and Parisian-ruin probabilities all evaluate in
//! closed form up to one-dimensional quadrature.
//!
//! Module map:
//! - [`levy_model`]: the process family, Laplace exponents, refraction.
//! - [`quad`]: adaptive Gauss–Kronrod quadrature.
//! - [`scale_fn`]: scale functions `W_q`, `Z_q` as exponential sums.
//! - [`refracted`]: refracted scale functions and two-sided exit/ruin identities.
//! - [`occupation`]: time-below-threshold Laplace transforms, bankruptcy,
//!   Parisian ruin, and the distribution of the total time in the red.
//! - [`mc_oracle`]: independent path simulator and estimators.
//! - [`cli_io`]: config ingestion, result records, and the CLI commands.

pub mod cli_io;
pub mod error;
pub mod levy_model;
pub mod mc_oracle;
pub mod occupation;
pub mod quad;
pub mod refracted;
pub mod scale_fn;

pub use error::{Error, Result};
