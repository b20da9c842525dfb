//! The `verify` command: re-derives every identity the library exposes from
//! independent ingredients (raw scale functions plus quadrature, textbook
//! closed forms, the path simulator) and reports one pass/fail line per
//! check, plus a sign adjudication for the downward joint transform whose
//! coupling sign the two candidate forms disagree on.
//!
//! The quick suite is purely analytic and finishes in seconds; the full
//! suite adds the Monte Carlo cross-checks.

use std::path::PathBuf;

use serde::Serialize;

use crate::error::Result;
use crate::levy_model::{JumpSpec, LevyModel, RefractedModel};
use crate::mc_oracle::{
    estimate_bankruptcy, estimate_exit, estimate_increment_mean, estimate_occupation_joint,
    estimate_parisian, estimate_total_occupation_lt, SimConfig, SimEstimate,
};
use crate::occupation::{
    bankruptcy_lt_ruin_finite, g_tail_representation_residual, h_tail_representation_residual,
    occ_lt_exit_down, occ_lt_exit_down_plus_variant, occ_lt_exit_up, occ_lt_reach_up,
    occupation_atom, occupation_density, prob_bankruptcy, prob_parisian, survival_lt,
    total_occupation_lt, z_representation_residual, OccupationQuery,
};
use crate::quad::{integrate, QuadTol};
use crate::refracted::{
    convolution_identity_residual, exit_down_u, exit_up_u, ruin_prob_u, ruin_prob_x,
    w_representation_residual,
};
use crate::scale_fn::ScaleFunction;

use super::{write_output, CliError, ModelSpecFile, OutFormat};

/// Which checks to run: `quick` is analytic-only, `full` adds the
/// simulation cross-checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifySuite {
    #[default]
    Quick,
    Full,
}

/// One verified identity (or family of identities): its worst observed
/// deviation and the criterion it was held to.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst deviation over the check's grid, in the criterion's units
    /// (absolute/relative error, residual, or standard errors).
    pub worst: f64,
    pub criterion: String,
    pub detail: String,
}

/// Both candidate signs of the coupling term in the downward joint
/// transform, evaluated at a reference point, with the simulator's vote in
/// the full suite. The subtracted form is the one the library exposes.
#[derive(Debug, Clone, Serialize)]
pub struct SignAdjudication {
    pub x: f64,
    pub a: f64,
    pub c: f64,
    pub p: f64,
    pub q: f64,
    /// Value of the exposed (subtracted-coupling) form.
    pub minus_combination: f64,
    /// Value of the rejected (added-coupling) form.
    pub plus_combination: f64,
    /// Whether the added form already disqualifies itself analytically.
    pub plus_violates_unit_interval: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minus_distance_in_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plus_distance_in_se: Option<f64>,
}

/// The machine-readable verification report.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: VerifySuite,
    pub model_hash: String,
    pub version: String,
    pub seed: u64,
    pub n_paths: usize,
    pub residual_tol: f64,
    pub checks: Vec<CheckOutcome>,
    pub sign_adjudication: SignAdjudication,
    pub passed: bool,
}

/// Arguments of the `verify` command.
#[derive(Debug)]
pub struct VerifyArgs {
    pub model: PathBuf,
    pub suite: VerifySuite,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub tol: Option<f64>,
    pub format: OutFormat,
    pub out: Option<PathBuf>,
}

/// Absolute tolerance for the degeneration checks (refraction removed, a
/// rate sent to zero), which compare two full evaluation pipelines.
const REDUCTION_TOL: f64 = 1e-9;

/// Standard-error multiple for the simulation cross-checks.
const SE_BAND: f64 = 3.0;

struct Ctx {
    rm: RefractedModel,
    cfg: SimConfig,
    tol: f64,
    /// Reference tuple for exit-flavoured checks: `a < b < c`, `x` between.
    x_ref: f64,
    a_ref: f64,
    c_ref: f64,
}

impl Ctx {
    fn b(&self) -> f64 {
        self.rm.b
    }
}

/// Runs one check body, folding any evaluation error into a failed outcome
/// so the report stays complete even when a quantity cannot be computed.
/// The reported `worst` is the raw deviation; pass/fail comes from the
/// tracker's normalized ratio.
fn run_check(
    name: &str,
    criterion: &str,
    body: impl FnOnce() -> Result<(Worst, String)>,
) -> CheckOutcome {
    match body() {
        Ok((worst, detail)) => CheckOutcome {
            name: name.into(),
            passed: worst.ratio.is_finite() && worst.ratio <= 1.0,
            worst: worst.raw,
            criterion: criterion.into(),
            detail,
        },
        Err(err) => CheckOutcome {
            name: name.into(),
            passed: false,
            worst: f64::NAN,
            criterion: criterion.into(),
            detail: format!("could not evaluate: {err}"),
        },
    }
}

/// Tracks the worst deviation of a check, normalized so that a ratio of 1.0
/// sits exactly on the pass/fail boundary.
#[derive(Default)]
struct Worst {
    ratio: f64,
    raw: f64,
}

impl Worst {
    fn note(&mut self, deviation: f64, allowed: f64) {
        let ratio = if deviation == 0.0 { 0.0 } else { deviation / allowed };
        if ratio > self.ratio || !ratio.is_finite() {
            self.ratio = ratio;
            self.raw = deviation;
        }
    }
}

/// The Laplace transform of the scale function recovers the reciprocal of
/// the shifted exponent: for each rate, damp the scale function just past
/// its leading exponential and integrate.
fn check_round_trip(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "transform-round-trip",
        "relative error <= 1e-6",
        || {
            let m = &ctx.rm.x_model;
            let mut worst = Worst::default();
            for q in [0.0, 0.5, 2.0] {
                let scale = ScaleFunction::new(m, q)?;
                let phi = m.right_inverse_phi(q)?;
                for gap in [0.5, 1.0, 2.0] {
                    let lambda = phi + gap;
                    // Beyond 45 damped e-folds the tail is below 1e-19 of
                    // the head; the damped form never overflows.
                    let numeric =
                        integrate(|x| scale.w_damped(lambda, x), 0.0, 45.0 / gap, QuadTol::new(1e-14, 1e-8))?;
                    let exact = 1.0 / (m.laplace_exponent(lambda)? - q);
                    worst.note((numeric - exact).abs() / exact.abs(), 1e-6);
                }
            }
            Ok((worst, "9 (rate, damping) pairs".into()))
        },
    )
}

/// The ruin probability of the classic textbook model (drift 1.5, unit-rate
/// unit-mean exponential claims) has the closed form (2/3)e^{-x/3}; checked
/// against the library's general evaluator. Model-independent.
fn check_classical_ruin() -> CheckOutcome {
    run_check(
        "classical-ruin-closed-form",
        "absolute error <= 1e-10",
        || {
            let m = LevyModel::new(1.5, 0.0, JumpSpec::new(1.0, vec![(1.0, 1.0)])?)?;
            let mut worst = Worst::default();
            for x in [0.0f64, 1.0, 3.0] {
                let exact = (2.0 / 3.0) * (-x / 3.0).exp();
                worst.note((ruin_prob_x(&m, x)? - exact).abs(), 1e-10);
            }
            Ok((worst, "textbook exponential-claims model, x in {0, 1, 3}".into()))
        },
    )
}

fn check_convolution(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "convolution-residuals",
        &format!("absolute residual <= {:e}", ctx.tol),
        || {
            let b = ctx.b();
            let mut worst = Worst::default();
            for (p, q) in [(0.0, 0.5), (0.3, 0.3), (0.5, 1.0), (1.0, 0.0), (2.0, 0.7)] {
                for frac in [0.2, 0.6, 1.0, 1.5, 2.5] {
                    worst.note(convolution_identity_residual(&ctx.rm, p, q, frac * b)?, ctx.tol);
                }
            }
            Ok((worst, "5 rate pairs x 5 levels".into()))
        },
    )
}

fn check_derivative_representation(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "derivative-representation-residuals",
        &format!("absolute residual <= {:e}", ctx.tol),
        || {
            let b = ctx.b();
            let mut worst = Worst::default();
            for q in [0.0, 0.3, 0.8, 1.5] {
                for dx in [0.25, 1.0, 2.0] {
                    worst.note(w_representation_residual(&ctx.rm, q, b + dx)?, ctx.tol);
                }
            }
            Ok((worst, "4 rates x 3 levels above the threshold".into()))
        },
    )
}

fn check_z_representation(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "z-representation-residuals",
        &format!("absolute residual <= {:e}", ctx.tol),
        || {
            let b = ctx.b();
            let mut worst = Worst::default();
            for q in [0.3, 0.8, 1.5] {
                for x in [0.5 * b, b, b + 1.0] {
                    worst.note(z_representation_residual(&ctx.rm, q, x)?, ctx.tol);
                }
            }
            Ok((worst, "3 rates x 3 levels".into()))
        },
    )
}

fn check_tail_representation(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "tail-representation-residuals",
        &format!("absolute residual <= {:e}", ctx.tol),
        || {
            let b = ctx.b();
            let mut worst = Worst::default();
            for q in [0.3, 0.8] {
                for dc in [1.0, 2.0] {
                    worst.note(g_tail_representation_residual(&ctx.rm, q, b + dc)?, ctx.tol);
                    worst.note(h_tail_representation_residual(&ctx.rm, q, b + dc)?, ctx.tol);
                }
            }
            Ok((worst, "both tail factorizations, 2 rates x 2 levels".into()))
        },
    )
}

/// With the refraction removed (`alpha = 0`) every transform must collapse
/// to the unrefracted-process formula, rebuilt here from raw scale
/// functions and quadrature only.
fn check_zero_refraction(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "zero-refraction-reduction",
        &format!("absolute difference <= {REDUCTION_TOL:e}"),
        || {
            let b = ctx.b();
            let rm0 = RefractedModel::new(ctx.rm.x_model.clone(), 0.0, b)?;
            let m = &rm0.x_model;
            let (x, a, c) = (ctx.x_ref, ctx.a_ref, ctx.c_ref);
            let (p, q) = (0.2, 0.5);
            let tol = QuadTol::default();
            let mut worst = Worst::default();

            // Plain two-sided exit: scale-function ratios of X.
            let wq = ScaleFunction::new(m, q)?;
            let ratio = wq.w(x - a) / wq.w(c - a);
            worst.note((exit_up_u(&rm0, q, x, a, c)? - ratio).abs(), REDUCTION_TOL);
            let down = wq.z(x - a) - wq.z(c - a) * ratio;
            worst.note((exit_down_u(&rm0, q, x, a, c)? - down).abs(), REDUCTION_TOL);

            // Joint exit/occupation transforms: the one-process occupation
            // formulas, with the below-threshold correction as an explicit
            // convolution against the undiscounted scale function.
            let wpq = ScaleFunction::new(m, p + q)?;
            let wp = ScaleFunction::new(m, p)?;
            let g0 = |y: f64| -> Result<f64> {
                let conv = integrate(|u| wp.w(y - u) * wpq.w(u - a), b, y, tol)?;
                Ok(wpq.w(y - a) - q * conv)
            };
            let h0 = |y: f64| -> Result<f64> {
                let conv = integrate(|u| wp.w(y - u) * wpq.z(u - a), b, y, tol)?;
                Ok(wpq.z(y - a) - q * conv)
            };
            let query = OccupationQuery { model: rm0.clone(), x, a, c, p, q };
            worst.note((occ_lt_exit_up(&query)? - g0(x)? / g0(c)?).abs(), REDUCTION_TOL);
            worst.note(
                (occ_lt_exit_down(&query)? - (h0(x)? - h0(c)? / g0(c)? * g0(x)?)).abs(),
                REDUCTION_TOL,
            );

            if rm0.net_profit_margin() > 0.0 {
                let mean = m.mean_per_unit_time();
                let w0 = ScaleFunction::new(m, 0.0)?;
                // Survival and ruin-side occupation transforms (p = 0).
                let gq = |y: f64| -> Result<f64> {
                    let conv = integrate(|u| w0.w(y - u) * wq.w(u), b, y, tol)?;
                    Ok(wq.w(y) - q * conv)
                };
                let hq = |y: f64| -> Result<f64> {
                    let conv = integrate(|u| w0.w(y - u) * wq.z(u), b, y, tol)?;
                    Ok(wq.z(y) - q * conv)
                };
                let survival = mean * gq(x)? / wq.z(b);
                worst.note((survival_lt(&rm0, x, q)? - survival).abs(), REDUCTION_TOL);
                let k0 = (mean + q * integrate(|y| wq.z(y), 0.0, b, tol)?) / wq.z(b);
                worst.note(
                    (bankruptcy_lt_ruin_finite(&rm0, x, q)? - (hq(x)? - k0 * gq(x)?)).abs(),
                    REDUCTION_TOL,
                );

                // Total time in the red: exponential tilt around the
                // leading root, correction integral against the
                // undiscounted scale function.
                let phi = m.right_inverse_phi(q)?;
                let f0 = |y: f64| -> Result<f64> {
                    let head = (phi * (y - b)).exp();
                    let corr = integrate(|u| (-phi * u).exp() * w0.w(u), 0.0, (y - b).max(0.0), tol)?;
                    Ok(head * (1.0 - q * corr))
                };
                let total = mean * phi / q * f0(x)?;
                worst.note((total_occupation_lt(&rm0, x, q)? - total).abs(), REDUCTION_TOL);
            }
            Ok((worst, "exit, joint, survival, ruin-side and total-occupation transforms".into()))
        },
    )
}

/// With the relevant rate sent to zero the occupation discounts disappear:
/// joint transforms fall back to the plain exits, bankruptcy to classical
/// ruin, and the always-finite occupation transforms to their trivial
/// values.
fn check_zero_rate(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "zero-rate-reduction",
        &format!("absolute difference <= {REDUCTION_TOL:e}"),
        || {
            let (x, a, c) = (ctx.x_ref, ctx.a_ref, ctx.c_ref);
            let mut worst = Worst::default();
            for p in [0.0, 0.3] {
                let query = OccupationQuery { model: ctx.rm.clone(), x, a, c, p, q: 0.0 };
                worst.note(
                    (occ_lt_exit_up(&query)? - exit_up_u(&ctx.rm, p, x, a, c)?).abs(),
                    REDUCTION_TOL,
                );
                worst.note(
                    (occ_lt_exit_down(&query)? - exit_down_u(&ctx.rm, p, x, a, c)?).abs(),
                    REDUCTION_TOL,
                );
            }
            if ctx.rm.net_profit_margin() > 0.0 {
                worst.note(
                    (prob_bankruptcy(&ctx.rm, x, 0.0)? - ruin_prob_u(&ctx.rm, x)?).abs(),
                    REDUCTION_TOL,
                );
                worst.note((total_occupation_lt(&ctx.rm, x, 0.0)? - 1.0).abs(), REDUCTION_TOL);
                worst.note((occ_lt_reach_up(&ctx.rm, x, c, 0.0)? - 1.0).abs(), REDUCTION_TOL);
                worst.note(prob_parisian(&ctx.rm, x, 0.0)?.abs(), REDUCTION_TOL);
            }
            Ok((worst, "joint exits, bankruptcy, reach-up, total occupation, Parisian".into()))
        },
    )
}

/// Every probability and transform stays inside `[0, 1]`, and the exact
/// boundary points hit their values.
fn check_unit_interval(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "unit-interval-and-boundaries",
        "all values within [0, 1], boundary points exact",
        || {
            let (a, c) = (ctx.a_ref, ctx.c_ref);
            let b = ctx.b();
            let mut worst = Worst::default();
            let mut inside = |v: f64| {
                worst.note((-v).max(v - 1.0).max(0.0), 1e-12);
            };
            for x in [a, 0.4 * b + 0.6 * a, b, ctx.x_ref, c] {
                for q in [0.0, 0.5, 2.0] {
                    inside(exit_up_u(&ctx.rm, q, x, a, c)?);
                    inside(exit_down_u(&ctx.rm, q, x, a, c)?);
                    let query = OccupationQuery { model: ctx.rm.clone(), x, a, c, p: 0.2, q };
                    inside(occ_lt_exit_up(&query)?);
                    inside(occ_lt_exit_down(&query)?);
                }
                if ctx.rm.net_profit_margin() > 0.0 && x >= 0.0 {
                    for q in [0.2, 0.8] {
                        inside(prob_bankruptcy(&ctx.rm, x, q)?);
                        inside(survival_lt(&ctx.rm, x, q)?);
                        inside(prob_parisian(&ctx.rm, x, q)?);
                        inside(total_occupation_lt(&ctx.rm, x, q)?);
                        inside(occ_lt_reach_up(&ctx.rm, x, c.max(x), q)?);
                    }
                    inside(occupation_atom(&ctx.rm, x)?);
                }
            }
            // Starting at the upper level, the upward exit is immediate.
            worst.note((exit_up_u(&ctx.rm, 0.7, c, a, c)? - 1.0).abs(), 1e-12);
            worst.note(exit_down_u(&ctx.rm, 0.7, c, a, c)?.abs(), 1e-12);
            Ok((worst, "grid over start levels and rates".into()))
        },
    )
}

/// The law of the total time in the red is an atom at zero plus a density;
/// for a diffusion model the two must integrate to one, and the density's
/// transform must match the closed-form transform. Runs on the loaded
/// model when it is jump-free with a Brownian part, otherwise on a
/// reference diffusion.
fn check_occupation_normalization(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "occupation-normalization",
        "mass balance within 1e-6, transform within 1e-4",
        || {
            let (rm, which) = diffusion_model(ctx)?;
            let x = rm.b + 0.2;
            let atom = occupation_atom(&rm, x)?;
            let mut mass = atom;
            let mut lo = 0.0;
            let mut hi = 0.25;
            // March dyadic segments until the density tail stops
            // contributing; the tail decays exponentially.
            for _ in 0..24 {
                let piece = integrate(|r| occupation_density(&rm, x, r).unwrap_or(0.0), lo, hi, QuadTol::new(1e-9, 1e-8))?;
                mass += piece;
                if hi > 4.0 && piece.abs() < 1e-9 {
                    break;
                }
                lo = hi;
                hi *= 2.0;
            }
            let mut worst = Worst::default();
            worst.note((mass - 1.0).abs(), 1e-6);
            for q in [0.5, 1.0] {
                let from_density = atom
                    + integrate(
                        |r| (-q * r).exp() * occupation_density(&rm, x, r).unwrap_or(0.0),
                        0.0,
                        hi,
                        QuadTol::new(1e-9, 1e-8),
                    )?;
                worst.note((from_density - total_occupation_lt(&rm, x, q)?).abs(), 1e-4);
            }
            Ok((worst, format!("{which}; atom {atom:.6}, total mass {mass:.8}")))
        },
    )
}

/// Picks the diffusion model the density checks run on.
fn diffusion_model(ctx: &Ctx) -> Result<(RefractedModel, String)> {
    let m = &ctx.rm.x_model;
    if m.sigma > 0.0 && m.jumps.is_empty() && ctx.rm.net_profit_margin() > 0.0 {
        return Ok((ctx.rm.clone(), "loaded diffusion model".into()));
    }
    let bm = LevyModel::new(1.0, 1.0, JumpSpec::none())?;
    Ok((RefractedModel::new(bm, 0.25, 1.0)?, "reference diffusion (drift 1, unit variance)".into()))
}

fn se_distance(analytic: f64, est: &SimEstimate) -> f64 {
    let gap = (analytic - est.mean).abs();
    if gap == 0.0 {
        0.0
    } else {
        gap / est.std_error
    }
}

/// A simulation budget for quantities that need paths to run to the end of
/// their lives rather than to a nearby barrier.
fn patient(cfg: &SimConfig) -> SimConfig {
    SimConfig { horizon: cfg.horizon.max(5_000.0), ..cfg.clone() }
}

fn euler_note(ctx: &Ctx) -> String {
    if ctx.rm.x_model.sigma > 0.0 {
        format!("; Euler steps of {} (discretization bias not corrected)", ctx.cfg.dt)
    } else {
        String::new()
    }
}

fn check_exit_vs_simulation(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "exit-vs-simulation",
        &format!("within {SE_BAND} standard errors"),
        || {
            let (x, a, c) = (ctx.x_ref, ctx.a_ref, ctx.c_ref);
            let mut worst = Worst::default();
            for q in [0.0, 0.3] {
                let est = estimate_exit(&ctx.rm, q, x, a, c, &ctx.cfg)?;
                worst.note(se_distance(exit_up_u(&ctx.rm, q, x, a, c)?, &est.up_lt), SE_BAND);
                worst.note(se_distance(exit_down_u(&ctx.rm, q, x, a, c)?, &est.down_lt), SE_BAND);
                worst.note(se_distance(exit_up_u(&ctx.rm, 0.0, x, a, c)?, &est.up_prob), SE_BAND);
                worst.note(se_distance(exit_down_u(&ctx.rm, 0.0, x, a, c)?, &est.down_prob), SE_BAND);
            }
            Ok((worst, format!("worst gap in standard errors{}", euler_note(ctx))))
        },
    )
}

fn check_joint_vs_simulation(ctx: &Ctx, adjudication: &mut SignAdjudication) -> CheckOutcome {
    run_check(
        "joint-vs-simulation",
        &format!("within {SE_BAND} standard errors"),
        || {
            let (x, a, c) = (ctx.x_ref, ctx.a_ref, ctx.c_ref);
            let (p, q) = (0.2, 0.5);
            let est = estimate_occupation_joint(&ctx.rm, p, q, x, a, c, &ctx.cfg)?;
            let query = OccupationQuery { model: ctx.rm.clone(), x, a, c, p, q };
            let mut worst = Worst::default();
            worst.note(se_distance(occ_lt_exit_up(&query)?, &est.up), SE_BAND);
            worst.note(se_distance(occ_lt_exit_down(&query)?, &est.down), SE_BAND);
            adjudication.oracle_mean = Some(est.down.mean);
            adjudication.oracle_std_error = Some(est.down.std_error);
            adjudication.minus_distance_in_se =
                Some(se_distance(adjudication.minus_combination, &est.down));
            adjudication.plus_distance_in_se =
                Some(se_distance(adjudication.plus_combination, &est.down));
            Ok((worst, format!("joint transform at p={p}, q={q}{}", euler_note(ctx))))
        },
    )
}

/// The full-suite check behind the adjudication section: the subtracted
/// coupling must sit inside the simulator's confidence band, and the added
/// one must either leave the unit interval or sit far outside the band.
fn check_sign_adjudication(adjudication: &SignAdjudication) -> CheckOutcome {
    let minus = adjudication.minus_distance_in_se.unwrap_or(f64::NAN);
    let plus = adjudication.plus_distance_in_se.unwrap_or(f64::NAN);
    let minus_ok = minus.is_finite() && minus <= SE_BAND;
    let plus_out = adjudication.plus_violates_unit_interval || (plus.is_finite() && plus > 10.0);
    CheckOutcome {
        name: "down-exit-sign-adjudication".into(),
        passed: minus_ok && plus_out,
        worst: minus,
        criterion: format!(
            "subtracted form within {SE_BAND} standard errors; added form outside [0, 1] or beyond 10"
        ),
        detail: format!(
            "subtracted form at {minus:.2} standard errors, added form at {plus:.2}{}",
            if adjudication.plus_violates_unit_interval {
                " (added form already leaves the unit interval)"
            } else {
                ""
            }
        ),
    }
}

fn check_bankruptcy_vs_simulation(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "bankruptcy-vs-simulation",
        &format!("within {SE_BAND} standard errors"),
        || {
            let cfg = patient(&ctx.cfg);
            let b = ctx.b();
            let mut worst = Worst::default();
            for q in [0.2, 0.8] {
                for frac in [0.5, 1.5] {
                    let x = frac * b;
                    let est = estimate_bankruptcy(&ctx.rm, x, q, &cfg)?;
                    worst.note(se_distance(prob_bankruptcy(&ctx.rm, x, q)?, &est), SE_BAND);
                }
            }
            Ok((worst, format!("alarm clocks in the red, 2 rates x 2 starts{}", euler_note(ctx))))
        },
    )
}

fn check_parisian_vs_simulation(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "parisian-vs-simulation",
        &format!("within {SE_BAND} standard errors"),
        || {
            let cfg = patient(&ctx.cfg);
            let b = ctx.b();
            let mut worst = Worst::default();
            for q in [0.2, 0.8] {
                for frac in [0.5, 1.5] {
                    let x = frac * b;
                    let est = estimate_parisian(&ctx.rm, x, q, &cfg)?;
                    worst.note(se_distance(prob_parisian(&ctx.rm, x, q)?, &est), SE_BAND);
                }
            }
            Ok((worst, format!("per-excursion clocks, 2 rates x 2 starts{}", euler_note(ctx))))
        },
    )
}

/// Two estimators of the same Parisian probability — per-excursion clocks,
/// and one minus the total-occupation transform — must agree within their
/// combined uncertainty even though they share no randomness.
fn check_parisian_estimator_agreement(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "parisian-estimator-agreement",
        &format!("within {SE_BAND} combined standard errors"),
        || {
            let cfg = patient(&ctx.cfg);
            let shifted = SimConfig { seed: cfg.seed.wrapping_add(1), ..cfg.clone() };
            let (x, q) = (1.2 * ctx.b(), 0.5);
            let clocks = estimate_parisian(&ctx.rm, x, q, &cfg)?;
            let transform = estimate_total_occupation_lt(&ctx.rm, x, q, &shifted)?;
            let other = 1.0 - transform.mean;
            let combined = clocks.std_error.hypot(transform.std_error);
            let gap = (clocks.mean - other).abs();
            let distance = if gap == 0.0 { 0.0 } else { gap / combined };
            let mut worst = Worst::default();
            worst.note(distance, SE_BAND);
            Ok((
                worst,
                format!(
                    "clock estimate {:.5} vs transform estimate {:.5} ({distance:.2} combined standard errors)",
                    clocks.mean, other
                ),
            ))
        },
    )
}

fn check_increment_mean(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "increment-mean-vs-simulation",
        &format!("within {SE_BAND} standard errors"),
        || {
            let est = estimate_increment_mean(&ctx.rm.x_model, &ctx.cfg)?;
            let distance = se_distance(ctx.rm.x_model.mean_per_unit_time(), &est);
            let mut worst = Worst::default();
            worst.note(distance, SE_BAND);
            Ok((
                worst,
                format!("unit-time increment sampled exactly, {distance:.2} standard errors"),
            ))
        },
    )
}

/// Estimates must not depend on how many worker threads computed them.
fn check_thread_determinism(ctx: &Ctx) -> CheckOutcome {
    run_check(
        "thread-count-determinism",
        "bitwise identical across 1, 4 and 8 threads",
        || {
            let cfg = SimConfig { n_paths: 2_000, ..ctx.cfg.clone() };
            let (x, a, c) = (ctx.x_ref, ctx.a_ref, ctx.c_ref);
            let mut results = Vec::new();
            for threads in [1usize, 4, 8] {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| crate::error::Error::Quadrature(format!("thread pool: {e}")))?;
                let est = pool.install(|| estimate_exit(&ctx.rm, 0.3, x, a, c, &cfg))?;
                results.push([
                    est.up_lt.mean.to_bits(),
                    est.down_lt.mean.to_bits(),
                    est.up_prob.mean.to_bits(),
                    est.down_prob.mean.to_bits(),
                    est.up_lt.std_error.to_bits(),
                ]);
            }
            let identical = results.windows(2).all(|w| w[0] == w[1]);
            let mut worst = Worst::default();
            worst.note(if identical { 0.0 } else { f64::INFINITY }, 1.0);
            Ok((worst, "exit estimates re-run under three pool sizes".into()))
        },
    )
}

/// Evaluates both candidate signs of the downward joint transform at the
/// reference point. The simulator's vote is filled in by the full suite.
fn adjudicate_signs(ctx: &Ctx) -> Result<SignAdjudication> {
    let (x, a, c) = (ctx.x_ref, ctx.a_ref, ctx.c_ref);
    let (p, q) = (0.2, 0.5);
    let query = OccupationQuery { model: ctx.rm.clone(), x, a, c, p, q };
    let minus = occ_lt_exit_down(&query)?;
    let plus = occ_lt_exit_down_plus_variant(&query)?;
    Ok(SignAdjudication {
        x,
        a,
        c,
        p,
        q,
        minus_combination: minus,
        plus_combination: plus,
        plus_violates_unit_interval: !(0.0..=1.0).contains(&plus),
        oracle_mean: None,
        oracle_std_error: None,
        minus_distance_in_se: None,
        plus_distance_in_se: None,
    })
}

/// Runs the requested suite and writes the report. The human summary goes
/// to stdout (stderr when stdout carries the JSON report); the JSON report
/// goes to `--out` when given, or to stdout under `--format json`.
pub fn cmd_verify(args: &VerifyArgs) -> std::result::Result<VerifyReport, CliError> {
    let spec = ModelSpecFile::load(&args.model)?;
    let rm = spec.build()?;
    let mut cfg = spec.defaults.sim.clone();
    cfg.n_paths = args.paths.unwrap_or(20_000);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let b = rm.b;
    let ctx = Ctx {
        rm,
        cfg,
        tol: args.tol.unwrap_or(spec.defaults.residual_tol),
        x_ref: 1.2 * b,
        a_ref: 0.0,
        c_ref: 3.0 * b,
    };

    let mut adjudication = adjudicate_signs(&ctx)?;
    let mut checks = vec![
        check_round_trip(&ctx),
        check_classical_ruin(),
        check_convolution(&ctx),
        check_derivative_representation(&ctx),
        check_z_representation(&ctx),
        check_tail_representation(&ctx),
        check_zero_refraction(&ctx),
        check_zero_rate(&ctx),
        check_unit_interval(&ctx),
        check_occupation_normalization(&ctx),
    ];
    if args.suite == VerifySuite::Full {
        checks.push(check_exit_vs_simulation(&ctx));
        checks.push(check_joint_vs_simulation(&ctx, &mut adjudication));
        checks.push(check_sign_adjudication(&adjudication));
        if ctx.rm.net_profit_margin() > 0.0 {
            checks.push(check_bankruptcy_vs_simulation(&ctx));
            checks.push(check_parisian_vs_simulation(&ctx));
            checks.push(check_parisian_estimator_agreement(&ctx));
        }
        checks.push(check_increment_mean(&ctx));
        checks.push(check_thread_determinism(&ctx));
    }

    let report = VerifyReport {
        suite: args.suite,
        model_hash: spec.model_hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: ctx.cfg.seed,
        n_paths: ctx.cfg.n_paths,
        residual_tol: ctx.tol,
        passed: checks.iter().all(|c| c.passed),
        checks,
        sign_adjudication: adjudication,
    };

    let summary = human_summary(&report);
    let json = {
        let mut text = serde_json::to_string_pretty(&report).expect("report is plain data");
        text.push('\n');
        text
    };
    match (&args.out, args.format) {
        (Some(path), _) => {
            write_output(&json, Some(path))?;
            print!("{summary}");
        }
        (None, OutFormat::Json) => {
            print!("{json}");
            eprint!("{summary}");
        }
        (None, OutFormat::Csv) => print!("{summary}"),
    }
    Ok(report)
}

/// Renders the one-line-per-check summary.
pub fn human_summary(report: &VerifyReport) -> String {
    use std::fmt::Write;
    let mut text = String::new();
    let suite = match report.suite {
        VerifySuite::Quick => "quick",
        VerifySuite::Full => "full",
    };
    let _ = writeln!(
        text,
        "model {}  version {}  suite {}  seed {}  paths {}",
        report.model_hash, report.version, suite, report.seed, report.n_paths
    );
    for check in &report.checks {
        let _ = writeln!(
            text,
            "[{}] {:<38} worst {:>10.3e}  (criterion: {})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.worst,
            check.criterion
        );
    }
    let adj = &report.sign_adjudication;
    let _ = writeln!(
        text,
        "sign adjudication of the downward joint transform at (x={}, a={}, c={}, p={}, q={}):",
        adj.x, adj.a, adj.c, adj.p, adj.q
    );
    let _ = writeln!(
        text,
        "  subtracted coupling {:.6}  |  added coupling {:.6}{}",
        adj.minus_combination,
        adj.plus_combination,
        if adj.plus_violates_unit_interval { "  (outside [0, 1])" } else { "" }
    );
    if let (Some(mean), Some(se)) = (adj.oracle_mean, adj.oracle_std_error) {
        let _ = writeln!(
            text,
            "  simulator {mean:.6} +- {se:.6}  ->  subtracted at {:.2} standard errors, added at {:.2}",
            adj.minus_distance_in_se.unwrap_or(f64::NAN),
            adj.plus_distance_in_se.unwrap_or(f64::NAN)
        );
    }
    let _ = writeln!(text, "overall: {}", if report.passed { "PASS" } else { "FAIL" });
    text
}
