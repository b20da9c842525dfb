//! Adaptive Gauss–Kronrod quadrature.
//!
//! A single 7-point Gauss / 15-point Kronrod kernel drives a globally
//! adaptive subdivision: the interval with the largest error estimate is
//! bisected until the summed error estimate meets the requested tolerance.
//! Integrands with known kinks (the scale-function convolutions are smooth
//! except where an argument changes sign) should be integrated with
//! [`integrate_split`], which never places a panel across a kink.

use crate::error::{Error, Result};
use std::collections::BinaryHeap;

/// Abscissae of the 15-point Kronrod rule on [-1, 1]; odd indices are the
/// embedded 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

/// Weights of the embedded 7-point Gauss rule.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Weights of the 15-point Kronrod rule.
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Hard cap on subdivisions before reporting non-convergence.
const MAX_PANELS: usize = 4096;

/// Absolute/relative tolerance pair for an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadTol {
    pub abs: f64,
    pub rel: f64,
}

impl QuadTol {
    pub const fn new(abs: f64, rel: f64) -> Self {
        QuadTol { abs, rel }
    }
}

impl Default for QuadTol {
    /// Tight default used by the scale-function convolutions.
    fn default() -> Self {
        QuadTol { abs: 1e-10, rel: 1e-9 }
    }
}

/// One evaluated panel: value, error estimate and bounds.
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Evaluates the G7–K15 pair on `[a, b]`, returning the Kronrod value and a
/// conservative error estimate in the style of the classic QUADPACK scaling.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut resabs = kronrod.abs();
    let mut samples = [0.0f64; 15];
    samples[7] = fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        samples[j] = f1;
        samples[14 - j] = f2;
        let fsum = f1 + f2;
        kronrod += WGK[j] * fsum;
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    if !kronrod.is_finite() {
        return Err(Error::Quadrature(format!(
            "integrand produced a non-finite value on [{a}, {b}]"
        )));
    }
    let mean = kronrod * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((samples[j] - mean).abs() + (samples[14 - j] - mean).abs());
    }
    let raw_err = ((kronrod - gauss) * half).abs();
    resabs *= half.abs();
    resasc *= half.abs();
    let mut err = raw_err;
    if resasc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / resasc).powf(1.5);
        err = if scale < 1.0 { resasc * scale } else { resasc };
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    Ok((kronrod * half, err))
}

/// Integrates `f` over `[a, b]` to the requested tolerance.
///
/// Returns 0 for an empty or inverted interval. Fails with
/// [`Error::Quadrature`] if the panel budget is exhausted before the summed
/// error estimate drops below `max(tol.abs, tol.rel * |integral|)`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: QuadTol) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let f_ref: &dyn Fn(f64) -> f64 = &f;
    let (value, error) = gk15(f_ref, a, b)?;
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, error });
    let mut total_value = value;
    let mut total_error = error;
    while total_error > tol.abs.max(tol.rel * total_value.abs()) {
        if heap.len() >= MAX_PANELS {
            return Err(Error::Quadrature(format!(
                "error estimate {total_error:.3e} still above tolerance after {MAX_PANELS} panels on [{a}, {b}]"
            )));
        }
        let worst = heap.pop().expect("heap cannot be empty while error is positive");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // The panel cannot be split further in floating point; accept it.
            total_error -= worst.error;
            total_value -= worst.value;
            let clamped = Panel { error: 0.0, ..worst };
            total_value += clamped.value;
            heap.push(clamped);
            continue;
        }
        let (lv, le) = gk15(f_ref, worst.a, mid)?;
        let (rv, re) = gk15(f_ref, mid, worst.b)?;
        total_value += lv + rv - worst.value;
        total_error += le + re - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Panel { a: mid, b: worst.b, value: rv, error: re });
    }
    Ok(total_value)
}

/// Integrates `f` over `[a, b]`, forcing panel boundaries at each point of
/// `splits` (points outside `(a, b)` are ignored). Use for integrands with
/// kinks at known locations.
pub fn integrate_split(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    splits: &[f64],
    tol: QuadTol,
) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let mut cuts: Vec<f64> = splits.iter().copied().filter(|&s| s > a && s < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut lo = a;
    let mut total = 0.0;
    let n_pieces = (cuts.len() + 1) as f64;
    let piece_tol = QuadTol { abs: tol.abs / n_pieces, rel: tol.rel };
    for cut in cuts.into_iter().chain(std::iter::once(b)) {
        total += integrate(&f, lo, cut, piece_tol)?;
        lo = cut;
    }
    Ok(total)
}

/// Integrates a fallible integrand over `[a, b]`.
///
/// The first error raised by `f` aborts the integration and is returned
/// as-is, so callers that integrate expressions built from other quadratures
/// see the inner failure instead of a generic non-finite-value report.
pub fn integrate_nested(
    f: impl Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    tol: QuadTol,
) -> Result<f64> {
    let stash: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
    let outcome = integrate(
        |t| match f(t) {
            Ok(v) => v,
            Err(e) => {
                stash.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        a,
        b,
        tol,
    );
    if let Some(inner) = stash.into_inner() {
        return Err(inner);
    }
    outcome
}
