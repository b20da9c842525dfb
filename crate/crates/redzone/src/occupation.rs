//! Occupation-time functionals: how long the refracted process spends below
//! its threshold, jointly with exit times and ruin events.
//!
//! Everything here concerns the "time in the red" `O(t) = int_0^t 1{U_s < b} ds`.
//! Three families of identities are implemented:
//!
//! * joint exit transforms `E_x[e^{-pT - qO(T)}; exit]` for the two-sided
//!   exit problem on `[a, c]`,
//! * bankruptcy: ruin is declared either immediately below 0 or when an
//!   exponential alarm that runs only while the process is in `[0, b)` rings,
//! * the total time in the red over an infinite horizon: its Laplace
//!   transform, the induced Parisian ruin probability, and its distribution
//!   (an atom at zero plus an absolutely continuous part).
//!
//! The workhorses are the combinations
//!
//! ```text
//! G(y) = w_{p+q}(y; a) - q int_b^y WY_p(y-u) w_{p+q}(u; a) du
//! H(y) = z_{p+q}(y; a) - q int_b^y WY_p(y-u) z_{p+q}(u; a) du
//! ```
//!
//! which play the roles of `w` and `z` for the process killed at rate `p`
//! everywhere and at the extra rate `q` below the threshold. At `q = 0` they
//! collapse to the plain refracted scale functions, so every transform here
//! degenerates to its exit-problem counterpart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::levy_model::RefractedModel;
use crate::quad::{integrate, integrate_nested, QuadTol};
use crate::refracted::{check_refracted_ordering, RefractedScaleEval};
use crate::scale_fn::ScaleFunction;

/// Quadrature tolerance for the outer threshold convolutions in `G` and `H`
/// (the inner refracted-scale evaluations run at a tighter tolerance).
const JOINT_TOL: QuadTol = QuadTol::new(1e-9, 1e-9);

/// Quadrature tolerance for the single-layer integrals (bankruptcy constant,
/// exponential tilts, diagnostics).
const SINGLE_TOL: QuadTol = QuadTol::new(1e-11, 1e-10);

/// Below this size of `q - alpha*phi(q)` the reach-up tilt is evaluated
/// termwise instead of dividing by the near-vanishing factor.
const TILT_GUARD: f64 = 1e-10;

/// Sample count used by [`occupation_density`] when the model has jumps and
/// the density must be estimated by sampling.
const DENSITY_SAMPLES: usize = 100_000;

/// Fixed seed for the same path, so repeated evaluations agree bitwise.
const DENSITY_SEED: u64 = 0x5eed_0001;

/// Inputs of one joint exit/occupation evaluation: start the refracted
/// process at `x`, stop at the first exit from `[a, c]`, charge rate `p` to
/// all elapsed time and rate `q` only to the time spent below the threshold.
#[derive(Debug, Clone)]
pub struct OccupationQuery {
    /// Refracted model under study.
    pub model: RefractedModel,
    /// Start level, in `[a, c]`.
    pub x: f64,
    /// Lower exit level, at most the threshold.
    pub a: f64,
    /// Upper exit level, at least the threshold.
    pub c: f64,
    /// Rate charged to the exit time itself.
    pub p: f64,
    /// Rate charged to the time spent below the threshold.
    pub q: f64,
}

impl OccupationQuery {
    /// Checks the level ordering `a <= x <= c` (with the threshold inside
    /// `[a, c]`) and nonnegativity of both rates.
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 0.0 && self.q >= 0.0) {
            return Err(Error::Ordering(format!(
                "rates must be nonnegative; got p={}, q={}",
                self.p, self.q
            )));
        }
        check_refracted_ordering(&self.model, self.a, self.x, self.c)
    }
}

/// Evaluator for the killed-below-threshold combinations `G` and `H` of one
/// model at rates `(p, q)` and reference level `a`.
struct JointEval {
    /// Refracted scale functions at the combined rate `p + q`.
    eval: RefractedScaleEval,
    /// Scale function of Y at the passage rate `p` alone.
    wy_p: ScaleFunction,
    q: f64,
    b: f64,
}

impl JointEval {
    fn new(model: &RefractedModel, p: f64, q: f64, a: f64) -> Result<Self> {
        if !(p >= 0.0 && q >= 0.0) {
            return Err(Error::Ordering(format!(
                "rates must be nonnegative; got p={p}, q={q}"
            )));
        }
        let eval = RefractedScaleEval::new(model, p + q, a)?;
        let wy_p = ScaleFunction::new(&model.refract(), p)?;
        Ok(JointEval { eval, wy_p, q, b: model.b })
    }

    /// `G(y)`: vanishing-at-`a` solution of the joint exit problem.
    fn g(&self, y: f64) -> Result<f64> {
        let base = self.eval.little_w(y)?;
        if y <= self.b || self.q == 0.0 {
            return Ok(base);
        }
        let conv = integrate_nested(
            |u| Ok(self.wy_p.w(y - u) * self.eval.little_w(u)?),
            self.b,
            y,
            JOINT_TOL,
        )?;
        Ok(base - self.q * conv)
    }

    /// `H(y)`: the companion normalized to 1 at and below `a`.
    fn h(&self, y: f64) -> Result<f64> {
        let base = self.eval.little_z(y)?;
        if y <= self.b || self.q == 0.0 {
            return Ok(base);
        }
        let conv = integrate_nested(
            |u| Ok(self.wy_p.w(y - u) * self.eval.little_z(u)?),
            self.b,
            y,
            JOINT_TOL,
        )?;
        Ok(base - self.q * conv)
    }
}

/// Joint transform `E_x[e^{-pT - qO(T)}; up]` of the upper exit time `T` and
/// the time in the red `O(T)`, on the event that the refracted process
/// reaches `c` before passing below `a`: the ratio `G(x)/G(c)`.
pub fn occ_lt_exit_up(query: &OccupationQuery) -> Result<f64> {
    query.validate()?;
    let ev = JointEval::new(&query.model, query.p, query.q, query.a)?;
    Ok(ev.g(query.x)? / ev.g(query.c)?)
}

/// Joint transform `E_x[e^{-pT - qO(T)}; down]` on the complementary event
/// that the process passes below `a` before reaching `c`:
/// `H(x) - H(c)/G(c) * G(x)`.
pub fn occ_lt_exit_down(query: &OccupationQuery) -> Result<f64> {
    query.validate()?;
    let ev = JointEval::new(&query.model, query.p, query.q, query.a)?;
    let g_x = ev.g(query.x)?;
    let g_c = ev.g(query.c)?;
    Ok(ev.h(query.x)? - ev.h(query.c)? / g_c * g_x)
}

/// Sign variant of [`occ_lt_exit_down`] with the coupling term added instead
/// of subtracted: `H(x) + H(c)/G(c) * G(x)`.
///
/// The added form breaks the `q = 0` reduction to the plain downward exit
/// transform and can leave `[0, 1]`. It is kept so the verification report
/// can evaluate both variants against the path simulator and record which one
/// the paths support.
pub fn occ_lt_exit_down_plus_variant(query: &OccupationQuery) -> Result<f64> {
    query.validate()?;
    let ev = JointEval::new(&query.model, query.p, query.q, query.a)?;
    let g_x = ev.g(query.x)?;
    let g_c = ev.g(query.c)?;
    Ok(ev.h(query.x)? + ev.h(query.c)? / g_c * g_x)
}

/// Checks the standing assumptions of the ruin-flavoured transforms: start
/// level at or above 0 and a strictly positive net profit margin.
fn check_ruin_inputs(rm: &RefractedModel, x: f64, q: f64) -> Result<()> {
    rm.require_net_profit()?;
    if !(x >= 0.0) {
        return Err(Error::Ordering(format!("start level x={x} must be nonnegative")));
    }
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    Ok(())
}

/// Shared pieces of the bankruptcy identities at rate `q`: the evaluator with
/// `p = 0`, `a = 0`, and the normalizing constant `Z_q(b) - alpha W_q(b)`
/// (strictly positive under the net profit condition, since `Z_q/W_q`
/// decreases to `q/Phi(q) > alpha`).
fn bankruptcy_pieces(rm: &RefractedModel, q: f64) -> Result<(JointEval, f64)> {
    let ev = JointEval::new(rm, 0.0, q, 0.0)?;
    let wx = ev.eval.scale_x();
    let denom = wx.z(rm.b) - rm.alpha * wx.w(rm.b);
    Ok((ev, denom))
}

/// Laplace transform `E_x[e^{-q O(T_0)}; T_0 < inf]` of the time spent in
/// `[0, b)` before classical ruin (first passage below 0), on the event that
/// ruin happens at all.
///
/// At `q = 0` this is the ruin probability of the refracted process. The
/// constant multiplying `G` involves one more threshold integral:
///
/// ```text
/// K = [ (E[X_1] - alpha) + q int_0^b ( ZY_q(y) - alpha W_q(y) ZY_q(b-y) ) dy ]
///     / [ Z_q(b) - alpha W_q(b) ]
/// ```
///
/// and the transform is `H(x) - K G(x)`.
pub fn bankruptcy_lt_ruin_finite(rm: &RefractedModel, x: f64, q: f64) -> Result<f64> {
    check_ruin_inputs(rm, x, q)?;
    let (ev, denom) = bankruptcy_pieces(rm, q)?;
    let wx = ev.eval.scale_x();
    let zy = ev.eval.scale_y();
    let margin = rm.net_profit_margin();
    let mixed = integrate(
        |y| zy.z(y) - rm.alpha * wx.w(y) * zy.z(rm.b - y),
        0.0,
        rm.b,
        SINGLE_TOL,
    )?;
    let constant = (margin + q * mixed) / denom;
    Ok(ev.h(x)? - constant * ev.g(x)?)
}

/// Defective Laplace transform `E_x[e^{-q O(inf)}; no ruin]` of the total
/// time ever spent in `[0, b)`, restricted to the paths that never pass
/// below 0: `(E[X_1] - alpha) G(x) / (Z_q(b) - alpha W_q(b))`.
///
/// At `q = 0` this is the survival probability of the refracted process.
pub fn survival_lt(rm: &RefractedModel, x: f64, q: f64) -> Result<f64> {
    check_ruin_inputs(rm, x, q)?;
    let (ev, denom) = bankruptcy_pieces(rm, q)?;
    Ok(rm.net_profit_margin() * ev.g(x)? / denom)
}

/// Probability of bankruptcy when an exponential alarm at rate `q` runs only
/// while the process is in `[0, b)` and passage below 0 is fatal
/// immediately: one minus [`survival_lt`], since surviving means never
/// passing below 0 *and* outlasting the alarm on every visit to the red.
pub fn prob_bankruptcy(rm: &RefractedModel, x: f64, q: f64) -> Result<f64> {
    Ok(1.0 - survival_lt(rm, x, q)?)
}

/// Exponential tilt appearing in the one-sided (no lower barrier)
/// occupation transforms:
///
/// ```text
/// F(y) = e^{phi(q)(y-b)},                                            y <= b
/// F(y) = e^{phi(q)(y-b)} (1 - (q - alpha phi(q))
///                              int_0^{y-b} e^{-phi(q)u} WY_0(u) du),  y > b
/// ```
///
/// `F` is strictly positive: the full integral to infinity equals exactly
/// `1/(q - alpha phi(q))`, so the parenthesis never reaches zero.
struct ReachUpTilt {
    phi: f64,
    coef: f64,
    wy0: ScaleFunction,
    b: f64,
}

impl ReachUpTilt {
    fn new(rm: &RefractedModel, q: f64) -> Result<Self> {
        let phi = rm.x_model.right_inverse_phi(q)?;
        let wy0 = ScaleFunction::new(&rm.refract(), 0.0)?;
        Ok(ReachUpTilt { phi, coef: q - rm.alpha * phi, wy0, b: rm.b })
    }

    fn f(&self, y: f64) -> Result<f64> {
        let prefactor = (self.phi * (y - self.b)).exp();
        if y <= self.b {
            return Ok(prefactor);
        }
        let damped = integrate(|u| self.wy0.w_damped(self.phi, u), 0.0, y - self.b, SINGLE_TOL)?;
        Ok(prefactor * (1.0 - self.coef * damped))
    }
}

/// Transform `E_x[e^{-q O(T_c)}]` of the time spent below the threshold
/// before the process first reaches `c >= x` (no lower barrier; under the
/// net profit condition the level is reached eventually): `F(x)/F(c)`.
///
/// At `q = 0` the tilt is identically 1 and so is the ratio.
pub fn occ_lt_reach_up(rm: &RefractedModel, x: f64, c: f64, q: f64) -> Result<f64> {
    rm.require_net_profit()?;
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    if !(x <= c) {
        return Err(Error::Ordering(format!(
            "start level must not exceed the target; got x={x} > c={c}"
        )));
    }
    let tilt = ReachUpTilt::new(rm, q)?;
    Ok(tilt.f(x)? / tilt.f(c)?)
}

/// Termwise closed form of [`total_occupation_lt`], obtained by inserting
/// the exact value `1/(q - alpha phi(q))` of the infinite damped integral
/// into the tilt and cancelling the near-vanishing factor:
///
/// ```text
/// e^{phi min(x-b, 0)} (E[X_1] - alpha) phi
///     sum_i w_i e^{theta_i max(x-b, 0)} / (phi - theta_i)
/// ```
///
/// with `theta_i, w_i` the roots and weights of Y's zero-rate scale
/// function. Exact for every `q > 0` and stable as `q -> 0`, where the
/// `theta = 0` term tends to 1 and the rest vanish.
fn total_occupation_lt_termwise(rm: &RefractedModel, phi: f64, x: f64) -> Result<f64> {
    let wy0 = ScaleFunction::new(&rm.refract(), 0.0)?;
    let shift = x - rm.b;
    let roots = wy0.roots();
    let mut sum = 0.0;
    for (&theta, &weight) in roots.roots.iter().zip(&roots.weights) {
        sum += weight * (theta * shift.max(0.0)).exp() / (phi - theta);
    }
    Ok((phi * shift.min(0.0)).exp() * rm.net_profit_margin() * phi * sum)
}

/// Laplace transform `E_x[e^{-q O(inf)}]` of the total time the refracted
/// process ever spends below its threshold:
/// `(E[X_1] - alpha) phi(q) / (q - alpha phi(q)) * F(x)`.
///
/// Requires the net profit condition (otherwise the total time is infinite).
/// By convention the transform is 1 at `q = 0`. When the denominator
/// `q - alpha phi(q)` falls below the guard size the termwise form of the
/// same expression is used instead of dividing by it.
pub fn total_occupation_lt(rm: &RefractedModel, x: f64, q: f64) -> Result<f64> {
    rm.require_net_profit()?;
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    if q == 0.0 {
        return Ok(1.0);
    }
    let tilt = ReachUpTilt::new(rm, q)?;
    if tilt.coef.abs() < TILT_GUARD {
        return total_occupation_lt_termwise(rm, tilt.phi, x);
    }
    Ok(rm.net_profit_margin() * tilt.phi / tilt.coef * tilt.f(x)?)
}

/// Parisian ruin probability with exponential implementation delays: ruin is
/// declared when one excursion below the threshold outlasts its own
/// independent exponential clock at rate `q`.
///
/// Conditionally on the path each excursion survives its clock with
/// probability `e^{-q * length}`, independently across excursions, so the
/// no-ruin probability is exactly the transform of the total time in the
/// red: the result is `1 - total_occupation_lt(x, q)`.
pub fn prob_parisian(rm: &RefractedModel, x: f64, q: f64) -> Result<f64> {
    Ok(1.0 - total_occupation_lt(rm, x, q)?)
}

/// Probability that the refracted process started at `x` never goes below
/// its threshold at all, i.e. the atom at zero of the total time in the
/// red: `(E[X_1] - alpha) WY_0(x - b)`. Zero for `x < b` (and at `x = b`
/// when a Brownian component forces an immediate dip).
pub fn occupation_atom(rm: &RefractedModel, x: f64) -> Result<f64> {
    rm.require_net_profit()?;
    let wy0 = ScaleFunction::new(&rm.refract(), 0.0)?;
    Ok(rm.net_profit_margin() * wy0.w(x - rm.b))
}

/// Monte Carlo estimate of [`occupation_density`] at one point.
#[derive(Debug, Clone, Copy)]
pub struct SampledDensity {
    /// Point estimate of the density value.
    pub value: f64,
    /// Standard error of the estimate.
    pub std_error: f64,
    /// Number of samples drawn.
    pub n_samples: usize,
}

/// Checks the common preconditions of the occupation-density evaluators and
/// rejects pure-drift models, whose time in the red is deterministic (all
/// mass sits in the atom and a point mass, so no density exists).
fn check_density_inputs(rm: &RefractedModel, r: f64) -> Result<()> {
    rm.require_net_profit()?;
    if !(r > 0.0) {
        return Err(Error::Ordering(format!("occupation level r={r} must be positive")));
    }
    if rm.x_model.sigma == 0.0 && rm.x_model.jumps.is_empty() {
        return Err(Error::UnsupportedModel(
            "occupation density requires a diffusion or jump component; \
             for a pure drift the time below the threshold is deterministic"
                .into(),
        ));
    }
    Ok(())
}

/// Density at `r > 0` of the total time the refracted process spends below
/// its threshold, started at `x`:
///
/// ```text
/// (E[X_1] - alpha) int_{max(0, b-x)}^inf  (y/r) WY_0'(y + x - b) P(X_r in dy)
/// ```
///
/// where `X_r` is the *unrefracted* process at time `r` (ballot-style
/// representation of the first passage time of `X` through Kendall's
/// identity). For jump-free models the law of `X_r` is Gaussian and the
/// integral is evaluated by quadrature; with jumps it is estimated by
/// sampling `X_r` directly ([`DENSITY_SAMPLES`] draws, fixed seed), see
/// [`occupation_density_sampled`] for control over the sample size and seed.
pub fn occupation_density(rm: &RefractedModel, x: f64, r: f64) -> Result<f64> {
    check_density_inputs(rm, r)?;
    if !rm.x_model.jumps.is_empty() {
        return Ok(occupation_density_sampled(rm, x, r, DENSITY_SAMPLES, DENSITY_SEED)?.value);
    }
    let m = &rm.x_model;
    let wy0 = ScaleFunction::new(&rm.refract(), 0.0)?;
    let mu = m.c * r;
    let sd = m.sigma * r.sqrt();
    let lo = (rm.b - x).max(0.0);
    let hi = mu + 14.0 * sd;
    if hi <= lo {
        // The Gaussian puts no numerically relevant mass on the support.
        return Ok(0.0);
    }
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let integral = integrate(
        |y| {
            let z = (y - mu) / sd;
            y / r * wy0.w_prime(y + x - rm.b) * (-0.5 * z * z).exp()
        },
        lo,
        hi,
        QuadTol::new(1e-13, 1e-11),
    )?;
    Ok(rm.net_profit_margin() * norm * integral)
}

/// Sampling estimator of [`occupation_density`], usable for any model with a
/// diffusion or jump component: draws `X_r` directly (Gaussian part plus a
/// Poisson number of mixed-exponential jumps) and averages the integrand.
pub fn occupation_density_sampled(
    rm: &RefractedModel,
    x: f64,
    r: f64,
    n_samples: usize,
    seed: u64,
) -> Result<SampledDensity> {
    check_density_inputs(rm, r)?;
    if n_samples < 2 {
        return Err(Error::Ordering(format!(
            "need at least two samples for a standard error; got {n_samples}"
        )));
    }
    let m = &rm.x_model;
    let wy0 = ScaleFunction::new(&rm.refract(), 0.0)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let poisson = if m.jumps.is_empty() {
        None
    } else {
        Some(
            Poisson::new(m.jumps.eta * r)
                .map_err(|e| Error::InvalidModel(format!("jump count sampler: {e}")))?,
        )
    };
    let exps: Vec<Exp<f64>> = m
        .jumps
        .terms
        .iter()
        .map(|&(_, rate)| {
            Exp::new(rate).map_err(|e| Error::InvalidModel(format!("jump size sampler: {e}")))
        })
        .collect::<Result<_>>()?;
    let sd = m.sigma * r.sqrt();
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n_samples {
        let mut v = m.c * r;
        if m.sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            v += sd * z;
        }
        if let Some(poisson) = &poisson {
            let count = rng.sample::<f64, _>(poisson) as u64;
            for _ in 0..count {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = exps.len() - 1;
                for (j, &(weight, _)) in m.jumps.terms.iter().enumerate() {
                    acc += weight;
                    if u <= acc {
                        pick = j;
                        break;
                    }
                }
                v -= exps[pick].sample(&mut rng);
            }
        }
        let sample = if v > 0.0 { v / r * wy0.w_prime(v + x - rm.b) } else { 0.0 };
        let k = (i + 1) as f64;
        let delta = sample - mean;
        mean += delta / k;
        m2 += delta * (sample - mean);
    }
    let margin = rm.net_profit_margin();
    let variance = m2 / (n_samples as f64 - 1.0);
    Ok(SampledDensity {
        value: margin * mean,
        std_error: margin * (variance / n_samples as f64).sqrt(),
        n_samples,
    })
}

/// Residual of the mixed-scale identity relating the two processes at one
/// rate:
///
/// ```text
/// Z_q(x) - alpha W_q(x)
///   = (1 - alpha W_q(0)) ZY_q(x) - alpha int_0^x W_q'(y) ZY_q(x-y) dy
/// ```
///
/// This ties X's scale pair on the left to Y's companion function on the
/// right and underpins the normalizing constant of the bankruptcy
/// identities.
pub fn z_representation_residual(rm: &RefractedModel, q: f64, x: f64) -> Result<f64> {
    if !(q >= 0.0 && x >= 0.0) {
        return Err(Error::Ordering(format!(
            "rate and level must be nonnegative; got q={q}, x={x}"
        )));
    }
    let wx = ScaleFunction::new(&rm.x_model, q)?;
    let zy = ScaleFunction::new(&rm.refract(), q)?;
    let lhs = wx.z(x) - rm.alpha * wx.w(x);
    let conv = integrate(|y| wx.w_prime(y) * zy.z(x - y), 0.0, x, SINGLE_TOL)?;
    let rhs = (1.0 - rm.alpha * wx.w(0.0)) * zy.z(x) - rm.alpha * conv;
    Ok((lhs - rhs).abs())
}

/// The bracketed combination shared by the two tail representations below:
/// `WY_0(c - z) + q int_0^{b-z} WY_0(c - z - y) WY_q(y) dy`.
fn tail_bracket(
    wy0: &ScaleFunction,
    wy_q: &ScaleFunction,
    q: f64,
    b: f64,
    c: f64,
    z: f64,
) -> Result<f64> {
    let mut v = wy0.w(c - z);
    if q > 0.0 && b - z > 0.0 {
        v += q * integrate(|y| wy0.w(c - z - y) * wy_q.w(y), 0.0, b - z, SINGLE_TOL)?;
    }
    Ok(v)
}

/// Residual of the whole-axis tail representation of `G(c)` (the `p = 0`,
/// `a = 0` evaluator) for `c > b`:
///
/// ```text
/// G(c) = (1 - alpha W_q(0)) [ WY_0(c) + q int_0^b WY_0(c-y) WY_q(y) dy ]
///        - alpha int_0^b W_q'(z) [ WY_0(c-z)
///                                  + q int_0^{b-z} WY_0(c-z-y) WY_q(y) dy ] dz
/// ```
///
/// The left side is the threshold convolution used everywhere else; the
/// right side re-expands it over the whole axis, so the two share no
/// quadrature.
pub fn g_tail_representation_residual(rm: &RefractedModel, q: f64, c: f64) -> Result<f64> {
    if !(c > rm.b) {
        return Err(Error::Ordering(format!(
            "the tail representation holds above the threshold; got c={c} <= b={}",
            rm.b
        )));
    }
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    let ev = JointEval::new(rm, 0.0, q, 0.0)?;
    let direct = ev.g(c)?;
    let wx = ev.eval.scale_x();
    let wy_q = ev.eval.scale_y();
    let wy0 = &ev.wy_p;
    let head = (1.0 - rm.alpha * wx.w(0.0)) * tail_bracket(wy0, wy_q, q, rm.b, c, 0.0)?;
    let cross = integrate_nested(
        |z| Ok(wx.w_prime(z) * tail_bracket(wy0, wy_q, q, rm.b, c, z)?),
        0.0,
        rm.b,
        SINGLE_TOL,
    )?;
    Ok((direct - (head - rm.alpha * cross)).abs())
}

/// Residual of the matching tail representation of `H(c)` for `c > b`:
///
/// ```text
/// H(c) = 1 + q int_0^b WY_0(c-y) ZY_q(y) dy
///        - alpha q int_0^b W_q(z) [ WY_0(c-z)
///                                   + q int_0^{b-z} WY_0(c-z-y) WY_q(y) dy ] dz
/// ```
pub fn h_tail_representation_residual(rm: &RefractedModel, q: f64, c: f64) -> Result<f64> {
    if !(c > rm.b) {
        return Err(Error::Ordering(format!(
            "the tail representation holds above the threshold; got c={c} <= b={}",
            rm.b
        )));
    }
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    let ev = JointEval::new(rm, 0.0, q, 0.0)?;
    let direct = ev.h(c)?;
    let wx = ev.eval.scale_x();
    let wy_q = ev.eval.scale_y();
    let wy0 = &ev.wy_p;
    let head = q * integrate(|y| wy0.w(c - y) * wy_q.z(y), 0.0, rm.b, SINGLE_TOL)?;
    let cross = integrate_nested(
        |z| Ok(wx.w(z) * tail_bracket(wy0, wy_q, q, rm.b, c, z)?),
        0.0,
        rm.b,
        SINGLE_TOL,
    )?;
    Ok((direct - (1.0 + head - rm.alpha * q * cross)).abs())
}
