//! Closed-form family of spectrally negative Lévy processes.
//!
//! A process X in this family is a linear drift plus an optional Brownian
//! component minus a compound Poisson sum of mixed-exponential jumps:
//!
//! ```text
//! psi(lambda) = c*lambda + sigma^2*lambda^2/2
//!             + eta * ( sum_i a_i * alpha_i / (lambda + alpha_i)  -  1 )
//! ```
//!
//! The module exposes the Laplace exponent `psi`, its derivative, the mean
//! `E[X_1] = psi'(0+)`, the right-inverse `Phi(q)` (largest root of
//! `psi(lambda) = q`), and the refraction transform that subtracts a constant
//! `alpha` from the drift to produce the process driving the path above the
//! refraction threshold.

use crate::error::{Error, Result};

/// Absolute distance to a pole `-alpha_i` below which evaluation of the
/// Laplace exponent is refused.
pub const POLE_EPS: f64 = 1e-9;

/// Relative tolerance on the residual `|psi(Phi(q)) - q|` of the right-inverse.
pub const PHI_RESIDUAL_TOL: f64 = 1e-12;

/// Mixed-exponential jump specification of the compound Poisson part.
///
/// Jumps arrive at rate `eta` and their sizes have density
/// `sum_i a_i * alpha_i * exp(-alpha_i * z)` on `z > 0` (the jumps are
/// subtracted from the path, so the process has no positive jumps).
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    /// Jump arrival rate per unit time; `0` means no jumps at all.
    pub eta: f64,
    /// Mixture components `(a_i, alpha_i)`: weights sum to one, rates are
    /// strictly increasing and positive.
    pub terms: Vec<(f64, f64)>,
}

impl JumpSpec {
    /// A jump-free specification (`eta = 0`, no mixture terms).
    pub fn none() -> Self {
        JumpSpec { eta: 0.0, terms: Vec::new() }
    }

    /// Builds a jump specification, checking the mixture invariants.
    pub fn new(eta: f64, terms: Vec<(f64, f64)>) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidModel(format!(
                "jump rate eta={eta} must be finite and nonnegative"
            )));
        }
        if eta == 0.0 && !terms.is_empty() {
            return Err(Error::InvalidModel(
                "mixture terms given but eta=0; drop the terms or set eta>0".into(),
            ));
        }
        if eta > 0.0 {
            if terms.is_empty() {
                return Err(Error::InvalidModel(
                    "eta>0 requires at least one mixture term".into(),
                ));
            }
            let mut weight_sum = 0.0;
            let mut prev_rate = 0.0;
            for &(a, alpha) in &terms {
                if !(a > 0.0) || !a.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "mixture weight {a} must be finite and positive"
                    )));
                }
                if !(alpha > prev_rate) || !alpha.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "mixture rates must be positive and strictly increasing; got {alpha} after {prev_rate}"
                    )));
                }
                weight_sum += a;
                prev_rate = alpha;
            }
            if (weight_sum - 1.0).abs() > 1e-12 * terms.len() as f64 {
                return Err(Error::InvalidModel(format!(
                    "mixture weights sum to {weight_sum}, expected 1"
                )));
            }
        }
        Ok(JumpSpec { eta, terms })
    }

    /// `true` when there is no compound Poisson part.
    pub fn is_empty(&self) -> bool {
        self.eta == 0.0
    }
}

/// A spectrally negative Lévy process of the closed-form family.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    /// Linear drift; for `sigma = 0` this is the bounded-variation drift.
    pub c: f64,
    /// Gaussian coefficient; `0` gives a bounded-variation process.
    pub sigma: f64,
    /// Compound Poisson jump part.
    pub jumps: JumpSpec,
}

impl LevyModel {
    /// Builds a model, rejecting parameter sets with only decreasing paths
    /// (`sigma = 0` and `c <= 0`).
    pub fn new(c: f64, sigma: f64, jumps: JumpSpec) -> Result<Self> {
        if !c.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidModel(format!(
                "drift c={c} and sigma={sigma} must be finite"
            )));
        }
        if sigma < 0.0 {
            return Err(Error::InvalidModel(format!("sigma={sigma} must be nonnegative")));
        }
        if sigma == 0.0 && c <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "sigma=0 requires a positive drift (got c={c}); paths would be nonincreasing"
            )));
        }
        Ok(LevyModel { c, sigma, jumps })
    }

    /// `true` when the paths have bounded variation (`sigma = 0`).
    pub fn bounded_variation(&self) -> bool {
        self.sigma == 0.0
    }

    /// Smallest jump-mixture rate `alpha_1`, or `None` when jump-free.
    pub fn first_pole(&self) -> Option<f64> {
        self.jumps.terms.first().map(|&(_, alpha)| alpha)
    }

    /// Refuses arguments within [`POLE_EPS`] of a pole `-alpha_i`.
    fn check_pole(&self, lambda: f64) -> Result<()> {
        for &(_, alpha) in &self.jumps.terms {
            if (lambda + alpha).abs() < POLE_EPS {
                return Err(Error::PoleProximity { lambda, pole: -alpha, eps: POLE_EPS });
            }
        }
        Ok(())
    }

    /// Laplace exponent `psi(lambda)` with `E[exp(lambda X_t)] = exp(t psi(lambda))`.
    ///
    /// Defined for `lambda > -alpha_1`; between poles the same rational
    /// expression is used as the analytic continuation (the root finder in
    /// `scale_fn` relies on this), but arguments within [`POLE_EPS`] of any
    /// pole are rejected.
    pub fn laplace_exponent(&self, lambda: f64) -> Result<f64> {
        self.check_pole(lambda)?;
        Ok(self.psi_unchecked(lambda))
    }

    /// `psi` without the pole-proximity guard; callers must keep their
    /// distance from the poles themselves.
    pub(crate) fn psi_unchecked(&self, lambda: f64) -> f64 {
        let mut v = self.c * lambda + 0.5 * self.sigma * self.sigma * lambda * lambda;
        if self.jumps.eta > 0.0 {
            let mut mix = 0.0;
            for &(a, alpha) in &self.jumps.terms {
                mix += a * alpha / (lambda + alpha);
            }
            v += self.jumps.eta * (mix - 1.0);
        }
        v
    }

    /// Analytic derivative `psi'(lambda)`; same domain rules as
    /// [`laplace_exponent`](Self::laplace_exponent).
    pub fn exponent_derivative(&self, lambda: f64) -> Result<f64> {
        self.check_pole(lambda)?;
        Ok(self.psi_prime_unchecked(lambda))
    }

    pub(crate) fn psi_prime_unchecked(&self, lambda: f64) -> f64 {
        let mut v = self.c + self.sigma * self.sigma * lambda;
        if self.jumps.eta > 0.0 {
            for &(a, alpha) in &self.jumps.terms {
                let d = lambda + alpha;
                v -= self.jumps.eta * a * alpha / (d * d);
            }
        }
        v
    }

    /// Mean per unit time `E[X_1] = psi'(0+) = c - eta * sum_i a_i/alpha_i`.
    pub fn mean_per_unit_time(&self) -> f64 {
        self.psi_prime_unchecked(0.0)
    }

    /// Right-inverse `Phi(q)`: the largest nonnegative root of
    /// `psi(lambda) = q`.
    ///
    /// `Phi(0) = 0` exactly when the mean is nonnegative; otherwise the root
    /// is bracketed (`psi` is strictly convex and increasing to infinity on
    /// the bracket) and polished by bisection plus Newton steps until
    /// `|psi(Phi(q)) - q| <= 1e-12 * max(1, q)`.
    pub fn right_inverse_phi(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) {
            return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
        }
        let mean = self.mean_per_unit_time();
        if q == 0.0 && mean >= 0.0 {
            return Ok(0.0);
        }
        // Left bracket edge: 0 when psi is already increasing there, else the
        // minimizer of psi on (0, inf), found by bisecting the increasing psi'.
        let lo = if mean >= 0.0 {
            0.0
        } else {
            let mut hi = 1.0;
            while self.psi_prime_unchecked(hi) <= 0.0 {
                hi *= 2.0;
                if hi > 1e12 {
                    return Err(Error::DegenerateRoots(
                        "psi' never becomes positive on (0, inf)".into(),
                    ));
                }
            }
            bisect(|l| self.psi_prime_unchecked(l), 0.0, hi)
        };
        let mut hi = if lo > 0.0 { 2.0 * lo } else { 1.0 };
        while self.psi_unchecked(hi) <= q {
            hi *= 2.0;
            if hi > 1e15 {
                return Err(Error::DegenerateRoots(format!(
                    "no bracket found for psi(lambda) = {q}"
                )));
            }
        }
        let mut root = bisect(|l| self.psi_unchecked(l) - q, lo, hi);
        // Newton polish; psi is convex and smooth away from the poles.
        for _ in 0..4 {
            let f = self.psi_unchecked(root) - q;
            let fp = self.psi_prime_unchecked(root);
            if fp.abs() > 0.0 {
                let next = root - f / fp;
                if next.is_finite() && next >= lo {
                    root = next;
                }
            }
        }
        let residual = (self.psi_unchecked(root) - q).abs();
        if residual > PHI_RESIDUAL_TOL * q.max(1.0) {
            return Err(Error::DegenerateRoots(format!(
                "right-inverse residual {residual} exceeds tolerance at q={q}"
            )));
        }
        Ok(root)
    }
}

/// Plain bisection on a sign change of `f` over `[lo, hi]`; runs until the
/// interval stops shrinking in floating point.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    let descending = flo > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if (fm > 0.0) == descending {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A Lévy model refracted at a threshold: above level `b` the drift is
/// reduced by `alpha`, below it the original dynamics apply.
#[derive(Debug, Clone, PartialEq)]
pub struct RefractedModel {
    /// Dynamics in force below the threshold.
    pub x_model: LevyModel,
    /// Drift reduction applied above the threshold. Zero is accepted and
    /// makes the refracted process coincide with `x_model`, which the
    /// degeneration checks rely on.
    pub alpha: f64,
    /// Refraction threshold.
    pub b: f64,
}

impl RefractedModel {
    /// Builds a refracted model.
    ///
    /// For bounded-variation `x_model` the refraction must leave some drift
    /// (`alpha < c`), otherwise the process above the threshold would have
    /// nonincreasing paths.
    pub fn new(x_model: LevyModel, alpha: f64, b: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidModel(format!(
                "refraction rate alpha={alpha} must be finite and nonnegative"
            )));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::InvalidModel(format!(
                "refraction threshold b={b} must be finite and positive"
            )));
        }
        if x_model.bounded_variation() && alpha >= x_model.c {
            return Err(Error::RefractionTooLarge { alpha, c: x_model.c });
        }
        Ok(RefractedModel { x_model, alpha, b })
    }

    /// The process driving the path above the threshold: same Gaussian
    /// coefficient and jumps, drift reduced by `alpha`. Its Laplace exponent
    /// is `lambda -> psi(lambda) - alpha*lambda`.
    pub fn refract(&self) -> LevyModel {
        LevyModel {
            c: self.x_model.c - self.alpha,
            sigma: self.x_model.sigma,
            jumps: self.x_model.jumps.clone(),
        }
    }

    /// Net profit margin `E[X_1] - alpha`; identities about infinite-horizon
    /// behaviour require this to be positive.
    pub fn net_profit_margin(&self) -> f64 {
        self.x_model.mean_per_unit_time() - self.alpha
    }

    /// Errors out unless the net profit condition `E[X_1] - alpha > 0` holds.
    pub fn require_net_profit(&self) -> Result<()> {
        let excess = self.net_profit_margin();
        if excess <= 0.0 {
            return Err(Error::NetProfit { excess });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Drift 1.5, unit-rate Poisson jumps with mean-1 exponential sizes.
    pub(crate) fn cl_model() -> LevyModel {
        LevyModel::new(1.5, 0.0, JumpSpec::new(1.0, vec![(1.0, 1.0)]).unwrap()).unwrap()
    }

    /// Brownian motion with unit drift and unit variance.
    pub(crate) fn bm_model() -> LevyModel {
        LevyModel::new(1.0, 1.0, JumpSpec::none()).unwrap()
    }

    #[test]
    fn exponent_of_pure_drift_is_linear() {
        let m = LevyModel::new(1.5, 0.0, JumpSpec::none()).unwrap();
        assert_abs_diff_eq!(m.laplace_exponent(2.0).unwrap(), 3.0, epsilon = 0.0);
    }

    #[test]
    fn exponent_of_reference_jump_model() {
        // psi(lambda) = 1.5 lambda - lambda/(lambda+1), so psi(1) = 1.5 - 0.5.
        let m = cl_model();
        assert_abs_diff_eq!(m.laplace_exponent(1.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exponent_vanishes_at_zero() {
        for m in [cl_model(), bm_model(), LevyModel::new(0.3, 0.7, JumpSpec::new(2.0, vec![(0.25, 0.5), (0.75, 2.0)]).unwrap()).unwrap()] {
            assert_eq!(m.laplace_exponent(0.0).unwrap(), 0.0, "psi(0) must be exactly 0");
        }
    }

    #[test]
    fn exponent_rejects_pole_proximity() {
        let m = cl_model();
        assert!(matches!(
            m.laplace_exponent(-1.0 + 1e-12),
            Err(Error::PoleProximity { .. })
        ));
    }

    #[test]
    fn derivative_of_reference_model_at_zero() {
        // psi'(0) = c - eta * a/alpha = 1.5 - 1.
        assert_abs_diff_eq!(cl_model().exponent_derivative(0.0).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn derivative_of_brownian_model_is_affine() {
        let m = bm_model();
        for lambda in [0.0, 0.5, 2.0] {
            assert_abs_diff_eq!(
                m.exponent_derivative(lambda).unwrap(),
                1.0 + lambda,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let m = LevyModel::new(1.2, 0.4, JumpSpec::new(1.5, vec![(0.3, 0.8), (0.7, 3.0)]).unwrap())
            .unwrap();
        let h = 1e-5;
        for lambda in [0.0, 0.3, 1.0, 2.5] {
            let analytic = m.exponent_derivative(lambda).unwrap();
            let numeric = (m.laplace_exponent(lambda + h).unwrap()
                - m.laplace_exponent(lambda - h).unwrap())
                / (2.0 * h);
            assert!(
                (analytic - numeric).abs() < 1e-8,
                "psi'({lambda}): analytic {analytic} vs centered difference {numeric}"
            );
        }
    }

    #[test]
    fn mean_of_reference_model() {
        assert_abs_diff_eq!(cl_model().mean_per_unit_time(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mean_without_jumps_is_the_drift() {
        assert_eq!(bm_model().mean_per_unit_time(), 1.0);
        assert_eq!(LevyModel::new(2.5, 0.0, JumpSpec::none()).unwrap().mean_per_unit_time(), 2.5);
    }

    #[test]
    fn right_inverse_is_zero_iff_zero_rate_and_nonnegative_mean() {
        assert_eq!(cl_model().right_inverse_phi(0.0).unwrap(), 0.0);
        assert!(cl_model().right_inverse_phi(0.1).unwrap() > 0.0);
        // Negative-mean model: Phi(0) is the strictly positive second root.
        let m = LevyModel::new(0.8, 0.0, JumpSpec::new(1.0, vec![(1.0, 1.0)]).unwrap()).unwrap();
        assert!(m.mean_per_unit_time() < 0.0);
        let phi0 = m.right_inverse_phi(0.0).unwrap();
        assert!(phi0 > 0.0, "Phi(0) = {phi0} should be positive when the mean is negative");
        assert_abs_diff_eq!(m.psi_unchecked(phi0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn right_inverse_of_brownian_model() {
        // psi(lambda) = lambda + lambda^2/2 gives Phi(4) = 2.
        assert_abs_diff_eq!(bm_model().right_inverse_phi(4.0).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn right_inverse_round_trip() {
        for m in [cl_model(), bm_model()] {
            for i in 1..=10 {
                let q = i as f64;
                let phi = m.right_inverse_phi(q).unwrap();
                let residual = (m.psi_unchecked(phi) - q).abs();
                assert!(
                    residual <= 1e-12 * q.max(1.0),
                    "psi(Phi({q})) residual {residual} too large"
                );
            }
        }
    }

    #[test]
    fn refraction_reduces_drift_only() {
        let rm = RefractedModel::new(cl_model(), 0.5, 1.0).unwrap();
        let y = rm.refract();
        assert_eq!(y.c, 1.0);
        assert_eq!(y.sigma, rm.x_model.sigma);
        assert_eq!(y.jumps, rm.x_model.jumps);
    }

    #[test]
    fn refracted_exponent_shifts_by_a_linear_term() {
        let rm = RefractedModel::new(cl_model(), 0.25, 1.0).unwrap();
        let y = rm.refract();
        for lambda in [0.1, 0.7, 2.0, 5.0] {
            let lhs = y.laplace_exponent(lambda).unwrap();
            let rhs = rm.x_model.laplace_exponent(lambda).unwrap() - rm.alpha * lambda;
            assert!((lhs - rhs).abs() <= 1e-14 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn refraction_must_leave_drift_for_bounded_variation() {
        assert!(matches!(
            RefractedModel::new(cl_model(), 1.5, 1.0),
            Err(Error::RefractionTooLarge { .. })
        ));
        assert!(matches!(
            RefractedModel::new(cl_model(), 2.0, 1.0),
            Err(Error::RefractionTooLarge { .. })
        ));
        // With a Gaussian part the full drift may be refracted away.
        assert!(RefractedModel::new(bm_model(), 1.5, 1.0).is_ok());
    }

    #[test]
    fn zero_refraction_is_accepted() {
        let rm = RefractedModel::new(cl_model(), 0.0, 1.0).unwrap();
        assert_eq!(rm.refract(), rm.x_model);
    }

    #[test]
    fn jump_spec_invariants_are_enforced() {
        assert!(JumpSpec::new(1.0, vec![]).is_err(), "eta>0 needs terms");
        assert!(JumpSpec::new(0.0, vec![(1.0, 1.0)]).is_err(), "eta=0 forbids terms");
        assert!(JumpSpec::new(1.0, vec![(0.5, 1.0), (0.5, 0.5)]).is_err(), "rates must increase");
        assert!(JumpSpec::new(1.0, vec![(0.4, 1.0), (0.4, 2.0)]).is_err(), "weights must sum to 1");
        assert!(JumpSpec::new(1.0, vec![(0.4, 1.0), (0.6, 2.0)]).is_ok());
    }

    #[test]
    fn nonincreasing_paths_are_rejected() {
        assert!(LevyModel::new(0.0, 0.0, JumpSpec::new(1.0, vec![(1.0, 1.0)]).unwrap()).is_err());
        assert!(LevyModel::new(-1.0, 0.0, JumpSpec::none()).is_err());
        // Driftless Brownian motion is fine.
        assert!(LevyModel::new(0.0, 1.0, JumpSpec::none()).is_ok());
    }
}
