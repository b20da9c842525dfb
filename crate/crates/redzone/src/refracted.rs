//! Refracted scale functions and the exit/ruin identities built from them.
//!
//! For a refracted process the role of the scale function `W_q` is played by
//! a pair of functions mixing the scale functions of X (dynamics below the
//! threshold `b`) and of Y = X - alpha*t (dynamics above it):
//!
//! ```text
//! w_q(x; a) = W_q(x-a) + alpha 1{x>=b} int_b^x WY_q(x-y) W_q'(y-a) dy
//! z_q(x; a) = Z_q(x-a) + alpha q 1{x>=b} int_b^x WY_q(x-y) W_q(y-a) dy
//! ```
//!
//! (`WY` denotes the scale function of Y.) Ratios of `w_q`/`z_q` solve the
//! two-sided exit problem for the refracted process exactly as `W_q`/`Z_q` do
//! for X, and the infinite-horizon limits give the ruin probabilities.

use crate::error::{Error, Result};
use crate::levy_model::{LevyModel, RefractedModel};
use crate::quad::{integrate, QuadTol};
use crate::scale_fn::{scale_roots, w_at_infinity, ScaleFunction};

/// Quadrature tolerance for the threshold convolutions.
const CONV_TOL: QuadTol = QuadTol::new(1e-10, 1e-9);

/// Evaluator for the refracted scale functions `w_q(.; a)` and `z_q(.; a)`
/// of one model at one rate and one lower reference level.
///
/// Holds the scale functions of X and Y so repeated evaluations share the
/// root extraction.
pub struct RefractedScaleEval {
    model: RefractedModel,
    q: f64,
    a: f64,
    scale_x: ScaleFunction,
    scale_y: ScaleFunction,
}

impl RefractedScaleEval {
    /// Sets up the evaluator; requires `a <= b` (the identities are only
    /// stated for reference levels below the refraction threshold).
    pub fn new(model: &RefractedModel, q: f64, a: f64) -> Result<Self> {
        if !(a <= model.b) {
            return Err(Error::Ordering(format!(
                "lower reference level a={a} must not exceed the refraction threshold b={}",
                model.b
            )));
        }
        if !(q >= 0.0) {
            return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
        }
        let scale_x = ScaleFunction::new(&model.x_model, q)?;
        let scale_y = ScaleFunction::new(&model.refract(), q)?;
        Ok(RefractedScaleEval { model: model.clone(), q, a, scale_x, scale_y })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn model(&self) -> &RefractedModel {
        &self.model
    }

    /// Scale function of X at this evaluator's rate.
    pub fn scale_x(&self) -> &ScaleFunction {
        &self.scale_x
    }

    /// Scale function of Y = X - alpha*t at this evaluator's rate.
    pub fn scale_y(&self) -> &ScaleFunction {
        &self.scale_y
    }

    /// Refracted scale function `w_q(x; a)`.
    ///
    /// Below the threshold this is plain `W_q(x-a)`; above it the correction
    /// integral over `[b, x]` is added by adaptive quadrature (the integrand
    /// is smooth in the interior: its endpoints are the only places where a
    /// scale-function argument changes sign).
    pub fn little_w(&self, x: f64) -> Result<f64> {
        let base = self.scale_x.w(x - self.a);
        let b = self.model.b;
        if x < b || self.model.alpha == 0.0 {
            return Ok(base);
        }
        let correction = integrate(
            |y| self.scale_y.w(x - y) * self.scale_x.w_prime(y - self.a),
            b,
            x,
            CONV_TOL,
        )?;
        Ok(base + self.model.alpha * correction)
    }

    /// Refracted companion function `z_q(x; a)`; identically 1 when `q = 0`.
    pub fn little_z(&self, x: f64) -> Result<f64> {
        let base = self.scale_x.z(x - self.a);
        let b = self.model.b;
        if x < b || self.model.alpha == 0.0 || self.q == 0.0 {
            return Ok(base);
        }
        let correction = integrate(
            |y| self.scale_y.w(x - y) * self.scale_x.w(y - self.a),
            b,
            x,
            CONV_TOL,
        )?;
        Ok(base + self.model.alpha * self.q * correction)
    }
}

/// Checks `a <= x <= c` with `a < c`.
fn check_ordering(a: f64, x: f64, c: f64) -> Result<()> {
    if !(a <= x && x <= c && a < c) {
        return Err(Error::Ordering(format!(
            "levels must satisfy a <= x <= c with a < c; got a={a}, x={x}, c={c}"
        )));
    }
    Ok(())
}

/// `true` for the one zero-mean model the exit identities still handle in
/// closed form: driftless Brownian motion, whose zero-rate scale function is
/// linear so the exit ratio is `(x-a)/(c-a)`.
fn is_driftless_brownian(m: &LevyModel) -> bool {
    m.sigma > 0.0 && m.c == 0.0 && m.jumps.is_empty()
}

/// Probability (for `q = 0`) or discounted probability `E[e^{-q T}; up first]`
/// of X reaching `c` before passing below `a`, started at `x`.
pub fn exit_up_x(m: &LevyModel, q: f64, x: f64, a: f64, c: f64) -> Result<f64> {
    check_ordering(a, x, c)?;
    if q == 0.0 && is_driftless_brownian(m) {
        return Ok((x - a) / (c - a));
    }
    let w = ScaleFunction::new(m, q)?;
    Ok(w.w(x - a) / w.w(c - a))
}

/// Discounted probability of X passing below `a` before reaching `c`.
pub fn exit_down_x(m: &LevyModel, q: f64, x: f64, a: f64, c: f64) -> Result<f64> {
    check_ordering(a, x, c)?;
    if q == 0.0 && is_driftless_brownian(m) {
        return Ok(1.0 - (x - a) / (c - a));
    }
    let w = ScaleFunction::new(m, q)?;
    Ok(w.z(x - a) - w.z(c - a) / w.w(c - a) * w.w(x - a))
}

/// Checks the exit-problem level ordering for a refracted model, which also
/// constrains the threshold: `a <= b <= c`.
pub(crate) fn check_refracted_ordering(rm: &RefractedModel, a: f64, x: f64, c: f64) -> Result<()> {
    check_ordering(a, x, c)?;
    if !(a <= rm.b && rm.b <= c) {
        return Err(Error::Ordering(format!(
            "threshold b={} must lie in [a, c] = [{a}, {c}]",
            rm.b
        )));
    }
    Ok(())
}

/// Discounted probability of the refracted process reaching `c` before
/// passing below `a`.
pub fn exit_up_u(rm: &RefractedModel, q: f64, x: f64, a: f64, c: f64) -> Result<f64> {
    check_refracted_ordering(rm, a, x, c)?;
    let ev = RefractedScaleEval::new(rm, q, a)?;
    Ok(ev.little_w(x)? / ev.little_w(c)?)
}

/// Discounted probability of the refracted process passing below `a` before
/// reaching `c`.
pub fn exit_down_u(rm: &RefractedModel, q: f64, x: f64, a: f64, c: f64) -> Result<f64> {
    check_refracted_ordering(rm, a, x, c)?;
    let ev = RefractedScaleEval::new(rm, q, a)?;
    Ok(ev.little_z(x)? - ev.little_z(c)? / ev.little_w(c)? * ev.little_w(x)?)
}

/// Probability that X ever passes below 0 from `x >= 0`:
/// `1 - max(E[X_1], 0) * W_0(x)`.
pub fn ruin_prob_x(m: &LevyModel, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Ordering(format!("start level x={x} must be nonnegative")));
    }
    let mean = m.mean_per_unit_time();
    if mean <= 0.0 {
        return Ok(1.0);
    }
    let w = ScaleFunction::new(m, 0.0)?;
    Ok(1.0 - mean * w.w(x))
}

/// Probability that the refracted process ever passes below 0 from `x >= 0`.
///
/// Requires the net profit condition `E[X_1] > alpha`; under it the
/// denominator `1 - alpha W_0(b)` stays positive because
/// `W_0(b) < 1/E[X_1]`.
pub fn ruin_prob_u(rm: &RefractedModel, x: f64) -> Result<f64> {
    rm.require_net_profit()?;
    if x < 0.0 {
        return Err(Error::Ordering(format!("start level x={x} must be nonnegative")));
    }
    let ev = RefractedScaleEval::new(rm, 0.0, 0.0)?;
    let w0_at_b = ev.scale_x().w(rm.b);
    let margin = rm.net_profit_margin() + rm.alpha; // = E[X_1]
    let scale = (margin - rm.alpha) / (1.0 - rm.alpha * w0_at_b);
    Ok(1.0 - scale * ev.little_w(x)?)
}

/// Residual of the convolution identity tying the scale functions of X and
/// Y together:
///
/// ```text
/// (q - p) int_0^x WY_p(x-y) W_q(y) dy
///   = W_q(x) - WY_p(x) + alpha [ W_q(0) WY_p(x) + int_0^x WY_p(x-y) W_q'(y) dy ]
/// ```
///
/// Both sides are evaluated by quadrature; the magnitude of the difference
/// is returned (zero up to quadrature error when the implementation is
/// consistent).
pub fn convolution_identity_residual(
    rm: &RefractedModel,
    p: f64,
    q: f64,
    x: f64,
) -> Result<f64> {
    if !(p >= 0.0 && q >= 0.0 && x >= 0.0) {
        return Err(Error::Ordering(format!(
            "rates and level must be nonnegative; got p={p}, q={q}, x={x}"
        )));
    }
    let w_x = ScaleFunction::new(&rm.x_model, q)?;
    let w_y = ScaleFunction::new(&rm.refract(), p)?;
    let lhs = (q - p) * integrate(|y| w_y.w(x - y) * w_x.w(y), 0.0, x, CONV_TOL)?;
    let cross = integrate(|y| w_y.w(x - y) * w_x.w_prime(y), 0.0, x, CONV_TOL)?;
    let rhs = w_x.w(x) - w_y.w(x) + rm.alpha * (w_x.w(0.0) * w_y.w(x) + cross);
    Ok((lhs - rhs).abs())
}

/// Residual of the whole-axis representation of `w_q(x; 0)` for `x > b`:
///
/// ```text
/// w_q(x; 0) = (1 - alpha W_q(0)) WY_q(x) - alpha int_0^b WY_q(x-y) W_q'(y) dy
/// ```
///
/// This rewrites the threshold convolution of [`RefractedScaleEval::little_w`]
/// purely in terms of Y's scale function, so the two evaluations are
/// independent quadratures of different integrands.
pub fn w_representation_residual(rm: &RefractedModel, q: f64, x: f64) -> Result<f64> {
    if !(x > rm.b) {
        return Err(Error::Ordering(format!(
            "the representation holds above the threshold; got x={x} <= b={}",
            rm.b
        )));
    }
    let ev = RefractedScaleEval::new(rm, q, 0.0)?;
    let direct = ev.little_w(x)?;
    let w_x = ev.scale_x();
    let w_y = ev.scale_y();
    let tail = integrate(|y| w_y.w(x - y) * w_x.w_prime(y), 0.0, rm.b, CONV_TOL)?;
    let alt = (1.0 - rm.alpha * w_x.w(0.0)) * w_y.w(x) - rm.alpha * tail;
    Ok((direct - alt).abs())
}

/// Direct check that `W_0` of the refracted drift tends to
/// `1/(E[X_1] - alpha)`; exposed for the long-horizon estimators, which use
/// the limit to size their safe barrier.
pub fn refracted_w_at_infinity(rm: &RefractedModel) -> Result<f64> {
    rm.require_net_profit()?;
    w_at_infinity(&rm.refract())
}

/// Second-largest root of Y's zero-rate equation, which sets the exponential
/// decay rate of Y's scale function toward its limit.
pub fn refracted_decay_rate(rm: &RefractedModel) -> Result<f64> {
    rm.require_net_profit()?;
    let roots = scale_roots(&rm.refract(), 0.0)?;
    roots
        .roots
        .iter()
        .copied()
        .filter(|&r| r < 0.0)
        .max_by(f64::total_cmp)
        .ok_or_else(|| Error::DegenerateRoots("no negative root for the refracted process".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::JumpSpec;
    use approx::assert_abs_diff_eq;

    fn cl_model() -> LevyModel {
        LevyModel::new(1.5, 0.0, JumpSpec::new(1.0, vec![(1.0, 1.0)]).unwrap()).unwrap()
    }

    fn cl_refracted() -> RefractedModel {
        RefractedModel::new(cl_model(), 0.25, 1.0).unwrap()
    }

    fn bm_model() -> LevyModel {
        LevyModel::new(1.0, 1.0, JumpSpec::none()).unwrap()
    }

    #[test]
    fn little_w_below_threshold_is_the_plain_scale_function() {
        let rm = cl_refracted();
        let ev = RefractedScaleEval::new(&rm, 0.5, 0.0).unwrap();
        let w = ScaleFunction::new(&rm.x_model, 0.5).unwrap();
        for x in [0.0, 0.3, 0.999] {
            assert_eq!(ev.little_w(x).unwrap(), w.w(x), "below b the correction must vanish");
        }
    }

    #[test]
    fn little_w_without_refraction_is_the_plain_scale_function() {
        let rm = RefractedModel::new(cl_model(), 0.0, 1.0).unwrap();
        let ev = RefractedScaleEval::new(&rm, 0.5, 0.0).unwrap();
        let w = ScaleFunction::new(&rm.x_model, 0.5).unwrap();
        for x in [0.5, 1.5, 3.0] {
            assert_eq!(ev.little_w(x).unwrap(), w.w(x));
            assert_eq!(ev.little_z(x).unwrap(), w.z(x));
        }
    }

    #[test]
    fn little_w_matches_its_whole_axis_representation() {
        let rm = cl_refracted();
        for q in [0.0, 0.5] {
            for x in [1.5, 2.5, 4.0] {
                let resid = w_representation_residual(&rm, q, x).unwrap();
                assert!(resid <= 1e-8, "representation residual {resid} at q={q}, x={x}");
            }
        }
    }

    #[test]
    fn little_z_below_threshold_and_at_zero_rate() {
        let rm = cl_refracted();
        let ev = RefractedScaleEval::new(&rm, 0.7, 0.0).unwrap();
        let w = ScaleFunction::new(&rm.x_model, 0.7).unwrap();
        assert_eq!(ev.little_z(0.4).unwrap(), w.z(0.4));
        let ev0 = RefractedScaleEval::new(&rm, 0.0, 0.0).unwrap();
        for x in [0.2, 1.0, 2.5] {
            assert_eq!(ev0.little_z(x).unwrap(), 1.0, "zero-rate z must be identically one");
        }
    }

    #[test]
    fn evaluator_rejects_reference_level_above_threshold() {
        let rm = cl_refracted();
        assert!(matches!(
            RefractedScaleEval::new(&rm, 0.5, 1.5),
            Err(Error::Ordering(_))
        ));
    }

    #[test]
    fn exit_up_x_boundary_cases() {
        let m = cl_model();
        assert_eq!(exit_up_x(&m, 0.3, 3.0, 0.0, 3.0).unwrap(), 1.0);
        // With a Gaussian part the scale function vanishes at 0.
        let up_at_floor = exit_up_x(&bm_model(), 0.4, 0.0, 0.0, 3.0).unwrap();
        assert_abs_diff_eq!(up_at_floor, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn driftless_brownian_exit_is_linear() {
        let m = LevyModel::new(0.0, 1.0, JumpSpec::none()).unwrap();
        assert_abs_diff_eq!(exit_up_x(&m, 0.0, 1.0, 0.0, 4.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(exit_down_x(&m, 0.0, 1.0, 0.0, 4.0).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn exit_down_x_complements_exit_up_at_zero_rate() {
        let m = cl_model();
        for x in [0.2, 1.0, 2.7] {
            let up = exit_up_x(&m, 0.0, x, 0.0, 3.0).unwrap();
            let down = exit_down_x(&m, 0.0, x, 0.0, 3.0).unwrap();
            assert_abs_diff_eq!(up + down, 1.0, epsilon = 1e-12);
        }
        assert_eq!(exit_down_x(&m, 0.6, 3.0, 0.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn exit_ordering_violations_are_rejected() {
        let m = cl_model();
        assert!(matches!(exit_up_x(&m, 0.0, 4.0, 0.0, 3.0), Err(Error::Ordering(_))));
        assert!(matches!(exit_up_x(&m, 0.0, -0.5, 0.0, 3.0), Err(Error::Ordering(_))));
        let rm = cl_refracted();
        assert!(matches!(exit_up_u(&rm, 0.0, 0.5, 0.2, 0.8), Err(Error::Ordering(_))),
            "threshold outside [a, c] must be rejected");
    }

    #[test]
    fn refracted_exit_without_refraction_reduces_to_plain_exit() {
        let rm = RefractedModel::new(cl_model(), 0.0, 1.0).unwrap();
        for q in [0.0, 0.3] {
            for x in [0.4, 1.2, 2.5] {
                let up_u = exit_up_u(&rm, q, x, 0.0, 3.0).unwrap();
                let up_x = exit_up_x(&rm.x_model, q, x, 0.0, 3.0).unwrap();
                assert!((up_u - up_x).abs() <= 1e-12, "alpha=0: {up_u} vs {up_x}");
                let down_u = exit_down_u(&rm, q, x, 0.0, 3.0).unwrap();
                let down_x = exit_down_x(&rm.x_model, q, x, 0.0, 3.0).unwrap();
                assert!((down_u - down_x).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn refracted_exit_partition_at_zero_rate() {
        let rm = cl_refracted();
        for x in [0.3, 1.0, 1.2, 2.0, 2.9] {
            let up = exit_up_u(&rm, 0.0, x, 0.0, 3.0).unwrap();
            let down = exit_down_u(&rm, 0.0, x, 0.0, 3.0).unwrap();
            assert!(
                (up + down - 1.0).abs() <= 1e-9,
                "up {up} + down {down} must partition at x={x}"
            );
        }
        assert_eq!(exit_up_u(&rm, 0.4, 3.0, 0.0, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn refracted_exit_pinned_value() {
        // Independently computed with high-precision quadrature over the
        // closed-form exponential sums.
        let rm = cl_refracted();
        let up = exit_up_u(&rm, 0.0, 1.2, 0.0, 3.0).unwrap();
        assert_abs_diff_eq!(up, 0.6685612180125866, epsilon = 1e-9);
    }

    #[test]
    fn quasi_space_homogeneity_of_refracted_exit() {
        // Shifting all levels by the reference level leaves the exit
        // functionals unchanged when the threshold is shifted along.
        let (a, x, c) = (0.4, 1.3, 3.1);
        let rm = RefractedModel::new(cl_model(), 0.25, 1.2).unwrap();
        let shifted = RefractedModel::new(cl_model(), 0.25, 1.2 - a).unwrap();
        for q in [0.0, 0.6] {
            let orig = exit_up_u(&rm, q, x, a, c).unwrap();
            let moved = exit_up_u(&shifted, q, x - a, 0.0, c - a).unwrap();
            assert!(
                (orig - moved).abs() <= 1e-10,
                "q={q}: {orig} vs shifted {moved}"
            );
        }
    }

    #[test]
    fn classical_ruin_closed_form() {
        // For the reference model W_0(x) = 2 - (4/3) e^{-x/3}, so the ruin
        // probability is (2/3) e^{-x/3}.
        let m = cl_model();
        for x in [0.0f64, 1.0, 3.0] {
            let expected = (2.0 / 3.0) * (-x / 3.0).exp();
            assert_abs_diff_eq!(ruin_prob_x(&m, x).unwrap(), expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn classical_ruin_is_certain_without_positive_mean() {
        let m = LevyModel::new(0.8, 0.0, JumpSpec::new(1.0, vec![(1.0, 1.0)]).unwrap()).unwrap();
        assert!(m.mean_per_unit_time() < 0.0);
        for x in [0.0, 2.0, 10.0] {
            assert_eq!(ruin_prob_x(&m, x).unwrap(), 1.0);
        }
        let zero_mean =
            LevyModel::new(1.0, 0.0, JumpSpec::new(1.0, vec![(1.0, 1.0)]).unwrap()).unwrap();
        assert_eq!(ruin_prob_x(&zero_mean, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn classical_ruin_vanishes_at_infinity() {
        let m = cl_model();
        assert!(ruin_prob_x(&m, 60.0).unwrap() < 1e-8);
    }

    #[test]
    fn refracted_ruin_reduces_to_classical_without_refraction() {
        let rm = RefractedModel::new(cl_model(), 0.0, 1.0).unwrap();
        for x in [0.0, 0.8, 2.5] {
            let refr = ruin_prob_u(&rm, x).unwrap();
            let plain = ruin_prob_x(&rm.x_model, x).unwrap();
            assert!((refr - plain).abs() <= 1e-12);
        }
    }

    #[test]
    fn refracted_ruin_pinned_value_and_tail() {
        let rm = cl_refracted();
        assert_abs_diff_eq!(ruin_prob_u(&rm, 0.8).unwrap(), 0.6688196290602698, epsilon = 1e-9);
        assert!(ruin_prob_u(&rm, 80.0).unwrap() < 1e-6, "ruin from high surplus must vanish");
    }

    #[test]
    fn refracted_ruin_requires_net_profit() {
        let rm = RefractedModel::new(cl_model(), 0.5, 1.0).unwrap();
        assert_eq!(rm.net_profit_margin(), 0.0);
        assert!(matches!(ruin_prob_u(&rm, 1.0), Err(Error::NetProfit { .. })));
    }

    #[test]
    fn convolution_identity_residuals_vanish() {
        let rm = cl_refracted();
        // Empty integrals at x = 0: the remaining terms cancel algebraically.
        assert!(convolution_identity_residual(&rm, 0.3, 0.7, 0.0).unwrap() <= 1e-15);
        // Equal rates make the left side vanish identically.
        assert!(convolution_identity_residual(&rm, 0.7, 0.7, 2.0).unwrap() <= 1e-8);
        // Generic rates.
        assert!(convolution_identity_residual(&rm, 0.3, 0.7, 2.5).unwrap() <= 1e-8);
        assert!(convolution_identity_residual(&rm, 0.0, 0.5, 1.7).unwrap() <= 1e-8);
    }

    #[test]
    fn exit_bounds_hold_on_a_grid() {
        let rm = cl_refracted();
        for q in [0.0, 0.3, 1.0] {
            for i in 0..=12 {
                let x = 0.25 * i as f64;
                let up = exit_up_u(&rm, q, x, 0.0, 3.0).unwrap();
                let down = exit_down_u(&rm, q, x, 0.0, 3.0).unwrap();
                assert!((-1e-12..=1.0 + 1e-12).contains(&up), "up {up} out of range");
                assert!((-1e-12..=1.0 + 1e-12).contains(&down), "down {down} out of range");
            }
        }
    }

    #[test]
    fn exit_up_is_monotone_in_the_start_level() {
        let rm = cl_refracted();
        let mut prev = 0.0;
        for i in 0..=15 {
            let x = 0.2 * i as f64;
            let up = exit_up_u(&rm, 0.3, x, 0.0, 3.0).unwrap();
            assert!(up >= prev - 1e-12, "exit_up must be nondecreasing; {prev} -> {up}");
            prev = up;
        }
    }

    #[test]
    fn decay_rate_and_limit_of_the_refracted_scale_function() {
        let rm = cl_refracted();
        // E[X_1] - alpha = 0.25, so the refracted limit is 4.
        assert_abs_diff_eq!(refracted_w_at_infinity(&rm).unwrap(), 4.0, epsilon = 1e-12);
        let rate = refracted_decay_rate(&rm).unwrap();
        assert!(rate < 0.0);
        // Y has drift 1.25 and the same jumps: psi_Y(r) = 1.25 r - r/(r+1) = 0
        // at r = -(1 - 1/1.25) = -0.2.
        assert_abs_diff_eq!(rate, -0.2, epsilon = 1e-12);
    }
}
