//! q-scale functions as exact exponential sums.
//!
//! For the mixed-exponential family the rational function
//! `1/(psi(lambda) - q)` has only simple real poles, so the scale function
//! `W_q` — defined on the transform side by
//! `int_0^inf exp(-lambda y) W_q(y) dy = 1/(psi(lambda) - q)` — is a finite
//! sum `W_q(x) = sum_i exp(theta_i x)/psi'(theta_i)` over the real roots
//! `theta_i` of `psi(lambda) = q`. Everything downstream (derivatives,
//! antiderivatives, the companion function `Z_q = 1 + q int_0^x W_q`) is
//! computed termwise from the same roots.
//!
//! Root layout (all roots are real and simple): with jump rates
//! `alpha_1 < ... < alpha_n`, one root lies in each interval
//! `(-alpha_k, -alpha_{k-1})`, two lie in `(-alpha_1, inf)` — the largest
//! being `Phi(q)` — and for `sigma > 0` one more lies in `(-inf, -alpha_n)`.
//! That gives `n+1` roots for bounded variation and `n+2` otherwise.

use crate::error::{Error, Result};
use crate::levy_model::{bisect, LevyModel};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

/// Residual tolerance for accepted roots: `|psi(theta) - q| <= tol * max(1,q)`.
const ROOT_RESIDUAL_TOL: f64 = 1e-10;

/// Threshold on `|psi'(theta_i)|` below which a conditioning warning is
/// recorded (near-collision of roots makes the partial-fraction weights
/// explode).
const CONDITIONING_EPS: f64 = 1e-8;

/// The real roots of `psi(lambda) = q` together with their partial-fraction
/// weights `1/psi'(theta_i)`.
#[derive(Debug, Clone)]
pub struct RootSet {
    /// Rate the roots were computed for.
    pub q: f64,
    /// Roots in strictly descending order; `roots[0]` is `Phi(q)`.
    pub roots: Vec<f64>,
    /// `1/psi'(theta_i)`, aligned with `roots`.
    pub weights: Vec<f64>,
    /// Set when some `|psi'(theta_i)|` is below the conditioning threshold;
    /// values are still returned but are numerically fragile.
    pub conditioning_warning: Option<String>,
}

/// A function of the form `constant + sum_i coeff_i * exp(rate_i * x)`.
///
/// The sum itself is defined on all of `R`; which extension rule applies at
/// negative arguments (0 for W-type functions, 1 for Z-type) is decided by
/// the owning [`ScaleFunction`] accessor, not here.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialSum {
    pub constant: f64,
    /// `(coefficient, exponent-rate)` pairs.
    pub terms: Vec<(f64, f64)>,
}

impl ExponentialSum {
    /// Evaluates `constant + sum coeff * exp(rate * x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let mut v = self.constant;
        for &(coeff, rate) in &self.terms {
            v += coeff * (rate * x).exp();
        }
        v
    }
}

/// Finds all real roots of `psi(lambda) = q` with their weights.
///
/// Preconditions: `q > 0`, or `q = 0` with `psi'(0+) != 0`. The excluded
/// `q = 0, psi'(0+) = 0` case has a double root at zero, where the
/// partial-fraction expansion breaks down.
pub fn scale_roots(m: &LevyModel, q: f64) -> Result<RootSet> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    let mean = m.mean_per_unit_time();
    if q == 0.0 && mean == 0.0 {
        return Err(Error::DegenerateRoots(
            "q=0 with zero mean gives a double root at 0; the expansion needs q>0 or a nonzero mean"
                .into(),
        ));
    }
    let psi = |l: f64| m.psi_unchecked(l) - q;
    let poles: Vec<f64> = m.jumps.terms.iter().map(|&(_, alpha)| alpha).collect();
    let n = poles.len();
    let mut roots: Vec<f64> = Vec::with_capacity(n + 2);

    // Pure linear drift: psi(lambda) = c*lambda has the single root q/c.
    if m.sigma == 0.0 && n == 0 {
        roots.push(q / m.c);
        return finish_roots(m, q, roots);
    }

    // One root left of the last pole when a Gaussian part is present
    // (psi -> +inf as lambda -> -inf, psi -> -inf at the pole from the left).
    if m.sigma > 0.0 && n > 0 {
        let pole = -poles[n - 1];
        let hi = edge_inside(psi, pole, -1.0, -1.0)?;
        let mut lo = pole - 1.0;
        let mut span = 1.0;
        while psi(lo) <= 0.0 {
            span *= 2.0;
            lo = pole - span;
            if span > 1e12 {
                return Err(Error::DegenerateRoots(
                    "no sign change left of the last pole".into(),
                ));
            }
        }
        roots.push(bisect(psi, lo, hi));
    }

    // One root strictly between consecutive poles: psi -> +inf from the right
    // edge of the interval's left pole and -inf into the right pole.
    for k in (1..n).rev() {
        let left = edge_inside(psi, -poles[k], 1.0, 1.0)?;
        let right = edge_inside(psi, -poles[k - 1], -1.0, -1.0)?;
        roots.push(bisect(psi, left, right));
    }

    // Rightmost interval (-alpha_1, inf) — or all of R when jump-free:
    // psi is strictly convex there, so it holds exactly two roots split by
    // the minimizer, the right one being Phi(q).
    let psi_prime = |l: f64| m.psi_prime_unchecked(l);
    let minimizer = if n > 0 {
        // psi' plunges to -inf at the pole from the right, then climbs.
        let left = edge_inside(psi_prime, -poles[0], 1.0, -1.0)?;
        let mut hi = left.abs().max(1.0);
        while psi_prime(hi) <= 0.0 {
            hi *= 2.0;
        }
        bisect(psi_prime, left, hi)
    } else {
        // Jump-free with sigma > 0: psi' is affine.
        -m.c / (m.sigma * m.sigma)
    };
    if psi(minimizer) < 0.0 {
        // Left-of-minimum root.
        let lo = if n > 0 {
            edge_inside(psi, -poles[0], 1.0, 1.0)?
        } else {
            let mut lo = minimizer - 1.0;
            let mut span = 1.0;
            while psi(lo) <= 0.0 {
                span *= 2.0;
                lo = minimizer - span;
            }
            lo
        };
        roots.push(bisect(psi, lo, minimizer));
        // Right-of-minimum root; this one is Phi(q).
        let mut hi = minimizer.abs().max(1.0);
        while psi(hi) <= 0.0 {
            hi *= 2.0;
        }
        roots.push(bisect(psi, minimizer, hi));
    } else {
        // psi(minimizer) >= 0 cannot happen for q > 0 (psi(Phi(q)) = q > 0
        // forces the minimum below q ... unless the roots have collided).
        return Err(Error::DegenerateRoots(format!(
            "the two rightmost roots collided near lambda={minimizer}"
        )));
    }

    finish_roots(m, q, roots)
}

/// Newton-polishes, snaps exact zeros, sorts, validates and weights roots.
fn finish_roots(m: &LevyModel, q: f64, mut roots: Vec<f64>) -> Result<RootSet> {
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let f = m.psi_unchecked(*r) - q;
            let fp = m.psi_prime_unchecked(*r);
            if fp != 0.0 {
                let next = *r - f / fp;
                if next.is_finite() {
                    *r = next;
                }
            }
        }
        // psi(0) = 0 exactly, so for q = 0 the root at the origin is exact.
        if q == 0.0 && r.abs() < 1e-12 {
            *r = 0.0;
        }
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    let mut weights = Vec::with_capacity(roots.len());
    let mut warning = None;
    for &r in &roots {
        let residual = (m.psi_unchecked(r) - q).abs();
        if residual > ROOT_RESIDUAL_TOL * q.max(1.0) {
            return Err(Error::DegenerateRoots(format!(
                "root {r} has residual {residual:.3e} beyond tolerance"
            )));
        }
        let slope = m.psi_prime_unchecked(r);
        if slope.abs() < CONDITIONING_EPS && warning.is_none() {
            warning = Some(format!(
                "|psi'({r})| = {:.3e} < {CONDITIONING_EPS}: nearly multiple root, weights are ill-conditioned",
                slope.abs()
            ));
        }
        if slope == 0.0 {
            return Err(Error::DegenerateRoots(format!(
                "psi'({r}) = 0: multiple root, no partial-fraction expansion"
            )));
        }
        weights.push(1.0 / slope);
    }
    Ok(RootSet { q, roots, weights, conditioning_warning: warning })
}

/// Steps from a pole into the adjacent interval (`direction` = +-1) until
/// `f` takes the sign it must have at that edge (`want_sign` = +-1, the sign
/// `f` diverges with at the pole, so a small enough offset always works).
fn edge_inside(
    f: impl Fn(f64) -> f64,
    pole: f64,
    direction: f64,
    want_sign: f64,
) -> Result<f64> {
    let scale = pole.abs().max(1.0);
    let mut eps = scale * 1e-9;
    for _ in 0..40 {
        let x = pole + direction * eps;
        let v = f(x);
        if v.is_finite() && v * want_sign > 0.0 {
            return Ok(x);
        }
        eps *= 4.0;
    }
    Err(Error::DegenerateRoots(format!(
        "could not step inside the interval next to the pole at {pole}"
    )))
}

/// A scale function pair (`W_q`, `Z_q`) for one model and one rate.
#[derive(Debug, Clone)]
pub struct ScaleFunction {
    q: f64,
    roots: RootSet,
}

impl ScaleFunction {
    /// Computes the roots for `(m, q)` and wraps them for evaluation.
    pub fn new(m: &LevyModel, q: f64) -> Result<Self> {
        Ok(ScaleFunction { q, roots: scale_roots(m, q)? })
    }

    /// The rate this scale function belongs to.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// The underlying roots and weights.
    pub fn roots(&self) -> &RootSet {
        &self.roots
    }

    /// `W_q(x) = sum_i exp(theta_i x)/psi'(theta_i)` for `x >= 0`, zero for
    /// negative arguments.
    pub fn w(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let mut v = 0.0;
        for (&r, &wt) in self.roots.roots.iter().zip(&self.roots.weights) {
            v += wt * (r * x).exp();
        }
        v
    }

    /// Termwise derivative of `W_q` for `x > 0` (right derivative at 0),
    /// zero for negative arguments.
    pub fn w_prime(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let mut v = 0.0;
        for (&r, &wt) in self.roots.roots.iter().zip(&self.roots.weights) {
            v += wt * r * (r * x).exp();
        }
        v
    }

    /// `Z_q(x) = 1 + q int_0^x W_q(y) dy`; identically 1 for `q = 0` and for
    /// `x <= 0`.
    pub fn z(&self, x: f64) -> f64 {
        if x <= 0.0 || self.q == 0.0 {
            return 1.0;
        }
        // q * sum_i exp(theta_i x)/(theta_i psi'(theta_i)); all roots are
        // nonzero when q > 0 because psi(0) = 0 < q.
        let mut v = 0.0;
        for (&r, &wt) in self.roots.roots.iter().zip(&self.roots.weights) {
            v += wt / r * (r * x).exp();
        }
        self.q * v
    }

    /// `int_0^x W_q(y) dy`, exact termwise integration (a root at zero — the
    /// `q = 0` case — integrates to a linear term).
    pub fn w_antiderivative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let mut v = 0.0;
        for (&r, &wt) in self.roots.roots.iter().zip(&self.roots.weights) {
            if r == 0.0 {
                v += wt * x;
            } else {
                v += wt * ((r * x).exp() - 1.0) / r;
            }
        }
        v
    }

    /// Evaluates `exp(-lambda x) * W_q(x)` as a fused sum
    /// `sum_i w_i exp((theta_i - lambda) x)`.
    ///
    /// For `lambda > Phi(q)` every term decays, so the product stays finite
    /// at arguments where `W_q(x)` alone would overflow; the Laplace-transform
    /// checks integrate exactly this.
    pub fn w_damped(&self, lambda: f64, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let mut v = 0.0;
        for (&r, &wt) in self.roots.roots.iter().zip(&self.roots.weights) {
            v += wt * ((r - lambda) * x).exp();
        }
        v
    }
}

/// Limit of `W_0(x)` as `x -> inf`, namely `1/psi'(0+)`.
///
/// Requires a strictly positive mean (otherwise `W_0` diverges).
pub fn w_at_infinity(m: &LevyModel) -> Result<f64> {
    let mean = m.mean_per_unit_time();
    if mean <= 0.0 {
        return Err(Error::NonpositiveMean { mean });
    }
    Ok(1.0 / mean)
}

/// Thread-safe memo of `q -> ScaleFunction` for one model.
///
/// Root extraction is cheap but the refracted convolutions evaluate the same
/// scale function at thousands of quadrature nodes, so the per-rate setup is
/// shared. Concurrent lookups take a read lock; the first computation of a
/// rate takes the write lock.
pub struct ScaleCache {
    model: LevyModel,
    memo: RwLock<HashMap<u64, Arc<ScaleFunction>>>,
}

impl ScaleCache {
    pub fn new(model: LevyModel) -> Self {
        ScaleCache { model, memo: RwLock::new(HashMap::new()) }
    }

    /// The model the cache serves.
    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    /// Returns the scale function for `q`, computing it on first use.
    pub fn at(&self, q: f64) -> Result<Arc<ScaleFunction>> {
        let key = q.to_bits();
        if let Some(hit) = self.memo.read().expect("scale cache poisoned").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let fresh = Arc::new(ScaleFunction::new(&self.model, q)?);
        let mut guard = self.memo.write().expect("scale cache poisoned");
        let entry = guard.entry(key).or_insert_with(|| Arc::clone(&fresh));
        Ok(Arc::clone(entry))
    }
}
