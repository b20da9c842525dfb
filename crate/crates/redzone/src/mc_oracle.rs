//! Independent Monte Carlo oracle: brute-force path simulation of the
//! refracted process, providing estimates of every quantity the analytic
//! modules compute in closed form.
//!
//! Two path engines share one interface:
//!
//! * **Bounded variation (`sigma = 0`): exact event-driven simulation.**
//!   Between jumps the path is piecewise linear (slope `c` below the
//!   threshold, `c - alpha` above), so jump times, level crossings and
//!   occupation increments are all solved in closed form. No discretization
//!   parameter exists in this engine.
//! * **`sigma > 0`: Euler–Maruyama** with step `dt`, occupation by linear
//!   interpolation of the below-threshold indicator within each step, and
//!   level-crossing detection by a between-step sign check (no bridge
//!   correction; the bias is documented and controlled by the dt-halving
//!   check in the acceptance suite).
//!
//! Determinism contract: every path gets its own counter-derived RNG stream,
//! paths are generated in parallel but reduced in a fixed order, so a fixed
//! `(seed, config, model)` produces bit-identical estimates regardless of
//! thread count. Antithetic pairs reuse one stream with mirrored uniforms
//! (`u -> 1-u`) and negated Gaussians; standard errors are then computed
//! over pair means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_model::{bisect, LevyModel, RefractedModel};
use crate::refracted::check_refracted_ordering;

/// `-log` of the tolerated probability that a path parked at the safe upper
/// barrier would ever have returned below the threshold: the barrier sits
/// `SAFE_LOG / |decay rate|` above `b`, making the parking bias about 1e-8
/// per path, far below any Monte Carlo standard error at feasible sizes.
const SAFE_LOG: f64 = 18.0;

/// Simulation budget and reproducibility knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of simulated paths (rounded up to even when `antithetic`).
    pub n_paths: usize,
    /// Hard time horizon; paths unresolved at the horizon are censored.
    pub horizon: f64,
    /// Euler step, used only when the model has a Brownian component.
    pub dt: f64,
    /// Master seed; per-path streams are derived from it and the path index.
    pub seed: u64,
    /// Simulate mirrored path pairs for variance reduction.
    pub antithetic: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { n_paths: 100_000, horizon: 1_000.0, dt: 1e-3, seed: 0xD1CE, antithetic: true }
    }
}

impl SimConfig {
    /// Checks the budget against the model: positive horizon, at least one
    /// path, and a usable Euler step whenever one will be needed.
    pub fn validate(&self, m: &LevyModel) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Ordering("n_paths must be at least 1".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Ordering(format!(
                "horizon {} must be positive",
                self.horizon
            )));
        }
        if m.sigma > 0.0 && !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(Error::Ordering(format!(
                "Euler step dt={} must lie in (0, horizon] for a model with a Brownian part",
                self.dt
            )));
        }
        Ok(())
    }
}

/// One Monte Carlo estimate with its sampling uncertainty and the censoring
/// tally (paths that hit the horizon before resolving are *reported*, never
/// silently dropped).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimEstimate {
    /// Sample mean of the estimator.
    pub mean: f64,
    /// Standard error of the mean (over antithetic pair means when pairing
    /// is on, which accounts for the intra-pair correlation).
    pub std_error: f64,
    /// Number of paths behind the estimate.
    pub n_paths: usize,
    /// Paths that reached the horizon unresolved.
    pub n_censored: usize,
}

/// What happened at one instant of a simulated path (trace output).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathEventKind {
    /// A downward jump landed.
    Jump,
    /// The path crossed the refraction threshold.
    RefractionCrossing,
    /// The path left the observation band (either side).
    Exit,
    /// An exponential alarm rang (bankruptcy/Parisian estimators).
    ClockRing,
}

/// One entry of an optional per-path event trace; times are nondecreasing
/// within a path.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PathEvent {
    pub time: f64,
    pub level: f64,
    pub kind: PathEventKind,
}

/// Everything an estimator needs to know about one finished path.
#[derive(Debug, Clone)]
pub struct PathFunctionals {
    /// First time strictly below the lower level, if that resolved the path.
    pub passage_down: Option<f64>,
    /// First time at or above the upper level, if that resolved the path.
    pub passage_up: Option<f64>,
    /// Time spent strictly below the threshold up to resolution.
    pub occupation: f64,
    /// Lengths of the completed below-threshold excursions, in order; a
    /// trailing partial excursion (cut by resolution) is included.
    pub excursions: Vec<f64>,
    /// Time at which the path stopped (passage or horizon).
    pub final_time: f64,
    /// Level at that moment.
    pub final_level: f64,
    /// True when the horizon arrived before either passage.
    pub censored: bool,
    /// Event trace, present only when requested.
    pub events: Option<Vec<PathEvent>>,
}

/// Per-path random stream: a counter-derived ChaCha stream plus the
/// antithetic mirror flag. All stochastic draws of the engines go through
/// this wrapper so that mirrored paths stay mirrored draw by draw.
pub struct PathRng {
    rng: ChaCha12Rng,
    mirror: bool,
}

/// SplitMix64 finalizer, used to spread `(seed, path index)` into
/// well-separated stream keys.
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PathRng {
    /// Stream for path-pair `index` under `seed`. The mirror flag does not
    /// enter the key: an antithetic partner replays the same stream with
    /// mirrored transforms.
    pub fn for_path(seed: u64, index: u64, mirror: bool) -> Self {
        let key = splitmix(seed ^ splitmix(index.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        PathRng { rng: ChaCha12Rng::seed_from_u64(key), mirror }
    }

    /// Uniform draw in the open interval (0, 1); mirrored to `1 - u` on the
    /// antithetic partner.
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.gen();
            if u > 0.0 {
                return if self.mirror { 1.0 - u } else { u };
            }
        }
    }

    /// Exponential draw by inversion; `rate = 0` yields infinity (a clock
    /// that never rings).
    pub fn exp(&mut self, rate: f64) -> f64 {
        if rate == 0.0 {
            return f64::INFINITY;
        }
        -self.uniform().ln() / rate
    }

    /// Standard Gaussian draw; negated on the antithetic partner.
    pub fn normal(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        if self.mirror {
            -z
        } else {
            z
        }
    }

    /// Index of the jump mixture component, by cumulative-weight inversion.
    fn pick_component(&mut self, terms: &[(f64, f64)]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (j, &(weight, _)) in terms.iter().enumerate() {
            acc += weight;
            if u <= acc {
                return j;
            }
        }
        terms.len() - 1
    }
}

/// Largest strictly negative root of the model's Laplace exponent: the
/// exponential decay rate of the probability of ever falling a given
/// distance. Found by bisection on the exponent alone (none of the
/// scale-function machinery is consulted — the oracle must stay
/// independent). `None` when the mean drift is nonpositive, in which case
/// no level is ever safe.
fn decay_rate(m: &LevyModel) -> Option<f64> {
    if m.mean_per_unit_time() <= 0.0 {
        return None;
    }
    let psi = |l: f64| m.psi_unchecked(l);
    let right = -1e-9;
    if !(psi(right) < 0.0) {
        return None;
    }
    let left = match m.first_pole() {
        Some(pole) => {
            // The exponent blows up to +inf at the first pole; step inward
            // from it until the sign flips.
            let mut eps = pole * 1e-9;
            loop {
                let l = -pole + eps;
                if l >= right {
                    return None;
                }
                if psi(l) > 0.0 {
                    break l;
                }
                eps *= 4.0;
            }
        }
        None => {
            // Pure Gaussian: the exponent is a parabola, walk left until it
            // turns positive.
            let mut l = -1.0;
            for _ in 0..200 {
                if psi(l) > 0.0 {
                    break;
                }
                l *= 2.0;
            }
            if !(psi(l) > 0.0) {
                return None;
            }
            l
        }
    };
    Some(bisect(psi, left, right))
}

/// Upper absorption barrier for infinite-horizon estimators: high enough
/// that a path parked there has only ~1e-8 probability of ever dipping
/// below the threshold again. `None` when the refracted drift is
/// nonpositive (no barrier is safe; the horizon then does the censoring).
pub fn safe_upper(rm: &RefractedModel) -> Option<f64> {
    decay_rate(&rm.refract()).map(|rate| rm.b + SAFE_LOG / rate.abs())
}

/// Fraction of the linear segment from `a0` to `a1` that lies below `b`.
fn fraction_below(a0: f64, a1: f64, b: f64) -> f64 {
    if a0 < b {
        if a1 < b {
            1.0
        } else {
            (b - a0) / (a1 - a0)
        }
    } else if a1 < b {
        (b - a1) / (a0 - a1)
    } else {
        0.0
    }
}

/// Simulates one refracted path from `x0` until it passes strictly below
/// `lower`, reaches `upper`, or hits the horizon, and returns its
/// functionals. `lower` may be `-inf` (never triggers) and `upper` `+inf`.
///
/// `alarm` is an optional below-threshold time budget used purely for trace
/// annotation: when the accumulated occupation reaches it, a clock-ring
/// event is logged (the path itself is unaffected).
///
/// Exactness: with no Brownian part the path is replayed event by event and
/// every reported time, level and occupation increment is exact. With a
/// Brownian part the Euler engine is used and `cfg.dt` governs the bias.
pub fn simulate_refracted_path(
    rm: &RefractedModel,
    x0: f64,
    lower: f64,
    upper: f64,
    cfg: &SimConfig,
    trace: bool,
    alarm: Option<f64>,
    rng: &mut PathRng,
) -> PathFunctionals {
    if rm.x_model.sigma == 0.0 {
        run_bv(rm, x0, lower, upper, cfg.horizon, trace, alarm, rng)
    } else {
        run_euler(rm, x0, lower, upper, cfg.horizon, cfg.dt, trace, alarm, rng)
    }
}

/// Shared early-outs: a start already outside the band resolves at time 0.
fn resolved_at_start(
    x0: f64,
    lower: f64,
    upper: f64,
    trace: bool,
) -> Option<PathFunctionals> {
    let immediate = |down: bool| PathFunctionals {
        passage_down: down.then_some(0.0),
        passage_up: (!down).then_some(0.0),
        occupation: 0.0,
        excursions: Vec::new(),
        final_time: 0.0,
        final_level: x0,
        censored: false,
        events: trace.then(|| {
            vec![PathEvent { time: 0.0, level: x0, kind: PathEventKind::Exit }]
        }),
    };
    if x0 < lower {
        Some(immediate(true))
    } else if x0 >= upper {
        Some(immediate(false))
    } else {
        None
    }
}

/// Exact event-driven engine for bounded-variation models.
#[allow(clippy::too_many_arguments)]
fn run_bv(
    rm: &RefractedModel,
    x0: f64,
    lower: f64,
    upper: f64,
    horizon: f64,
    trace: bool,
    alarm: Option<f64>,
    rng: &mut PathRng,
) -> PathFunctionals {
    if let Some(done) = resolved_at_start(x0, lower, upper, trace) {
        return done;
    }
    let mut alarm = alarm;
    let m = &rm.x_model;
    let b = rm.b;
    let slope_below = m.c;
    let slope_above = m.c - rm.alpha;
    let eta = m.jumps.eta;

    let mut t = 0.0;
    let mut u = x0;
    let mut occupation = 0.0;
    let mut current_red = 0.0;
    let mut excursions = Vec::new();
    let mut events: Option<Vec<PathEvent>> = trace.then(Vec::new);
    let mut passage_down = None;
    let mut passage_up = None;
    let mut censored = false;

    let mut next_jump = if eta > 0.0 { rng.exp(eta) } else { f64::INFINITY };
    let log = |events: &mut Option<Vec<PathEvent>>, time, level, kind| {
        if let Some(ev) = events {
            ev.push(PathEvent { time, level, kind });
        }
    };

    loop {
        let below = u < b;
        let slope = if below { slope_below } else { slope_above };
        let dt_kink = if below { (b - u) / slope } else { f64::INFINITY };
        let dt_up = if upper.is_finite() { (upper - u) / slope } else { f64::INFINITY };
        let dt_jump = next_jump - t;
        let dt_horizon = horizon - t;
        let dt = dt_kink.min(dt_up).min(dt_jump).min(dt_horizon);
        if below {
            if let Some(budget) = alarm {
                if occupation + dt >= budget {
                    let wait = budget - occupation;
                    log(
                        &mut events,
                        t + wait,
                        u + slope * wait,
                        PathEventKind::ClockRing,
                    );
                    alarm = None;
                }
            }
            occupation += dt;
            current_red += dt;
        }
        if dt == dt_up {
            // Creeping: the drift reaches the barrier exactly.
            t += dt;
            u = upper;
            passage_up = Some(t);
            log(&mut events, t, u, PathEventKind::Exit);
            break;
        } else if dt == dt_kink {
            t += dt;
            u = b;
            if current_red > 0.0 {
                excursions.push(current_red);
                current_red = 0.0;
            }
            log(&mut events, t, u, PathEventKind::RefractionCrossing);
        } else if dt == dt_jump {
            t = next_jump;
            u += slope * dt;
            let component = rng.pick_component(&m.jumps.terms);
            let size = rng.exp(m.jumps.terms[component].1);
            u -= size;
            log(&mut events, t, u, PathEventKind::Jump);
            if u < lower {
                passage_down = Some(t);
                log(&mut events, t, u, PathEventKind::Exit);
                break;
            }
            next_jump = t + rng.exp(eta);
        } else {
            t = horizon;
            u += slope * dt;
            censored = true;
            break;
        }
    }
    if current_red > 0.0 {
        excursions.push(current_red);
    }
    PathFunctionals {
        passage_down,
        passage_up,
        occupation,
        excursions,
        final_time: t,
        final_level: u,
        censored,
        events,
    }
}

/// Euler–Maruyama engine for models with a Brownian component. Jumps are
/// scheduled exactly (exponential clocks) but applied at the end of the step
/// containing them; occupation and crossing times use linear interpolation
/// within the step.
#[allow(clippy::too_many_arguments)]
/// Appends one Euler step's buffered events in time order.
fn flush_step_events(events: &mut Option<Vec<PathEvent>>, mut batch: Vec<PathEvent>) {
    if let Some(ev) = events {
        batch.sort_by(|x, y| x.time.total_cmp(&y.time));
        ev.append(&mut batch);
    }
}

fn run_euler(
    rm: &RefractedModel,
    x0: f64,
    lower: f64,
    upper: f64,
    horizon: f64,
    dt: f64,
    trace: bool,
    alarm: Option<f64>,
    rng: &mut PathRng,
) -> PathFunctionals {
    if let Some(done) = resolved_at_start(x0, lower, upper, trace) {
        return done;
    }
    let mut alarm = alarm;
    let m = &rm.x_model;
    let b = rm.b;
    let eta = m.jumps.eta;

    let mut t = 0.0;
    let mut u = x0;
    let mut occupation = 0.0;
    let mut current_red = 0.0;
    let mut excursions = Vec::new();
    let mut events: Option<Vec<PathEvent>> = trace.then(Vec::new);
    let mut passage_down = None;
    let mut passage_up = None;
    let mut censored = false;

    let mut next_jump = if eta > 0.0 { rng.exp(eta) } else { f64::INFINITY };

    while t < horizon {
        let step = dt.min(horizon - t);
        // Indicator strict at the threshold: reduced drift only above b.
        let slope = if u > b { m.c - rm.alpha } else { m.c };
        let mut du = slope * step + m.sigma * step.sqrt() * rng.normal();
        // Sub-step event times are interpolations and emerge out of order
        // (a jump arrival can precede a ring computed later), so buffer the
        // step's events and sort before appending.
        let mut step_events: Vec<PathEvent> = Vec::new();
        while next_jump <= t + step {
            let arrival = next_jump;
            let component = rng.pick_component(&m.jumps.terms);
            du -= rng.exp(m.jumps.terms[component].1);
            next_jump += rng.exp(eta);
            if events.is_some() {
                // The scheme applies the jump at the step end; the logged
                // level is the post-step level after this jump.
                step_events.push(PathEvent {
                    time: arrival,
                    level: u + du,
                    kind: PathEventKind::Jump,
                });
            }
        }
        let u_new = u + du;
        // Locate a barrier crossing on the interpolated segment first, so
        // occupation only accrues up to the (sub-step) exit time. Checking
        // down before up resolves the measure-zero tie towards ruin.
        let mut exited_down = false;
        let mut exited_up = false;
        let seg_end = if u_new < lower {
            exited_down = true;
            t + step * ((u - lower) / (u - u_new)).clamp(0.0, 1.0)
        } else if u_new >= upper {
            exited_up = true;
            t + step * ((upper - u) / (u_new - u)).clamp(0.0, 1.0)
        } else {
            t + step
        };
        let sub = seg_end - t;
        let level_end = u + (u_new - u) * (sub / step);
        let frac = fraction_below(u, level_end, b);
        if let Some(budget) = alarm {
            if frac > 0.0 && occupation + sub * frac >= budget {
                // Occupation accrues at rate `frac` across the segment under
                // the linear interpolation, so invert that rate for the
                // ring time.
                let when = (t + (budget - occupation) / frac).clamp(t, seg_end);
                let level = u + (u_new - u) * ((when - t) / step);
                if events.is_some() {
                    step_events.push(PathEvent { time: when, level, kind: PathEventKind::ClockRing });
                }
                alarm = None;
            }
        }
        occupation += sub * frac;
        if u < b && level_end >= b {
            current_red += sub * frac;
            excursions.push(current_red);
            current_red = 0.0;
            if events.is_some() {
                step_events.push(PathEvent { time: seg_end, level: b, kind: PathEventKind::RefractionCrossing });
            }
        } else if u >= b && level_end < b {
            current_red += sub * frac;
            if events.is_some() {
                step_events.push(PathEvent { time: seg_end, level: b, kind: PathEventKind::RefractionCrossing });
            }
        } else if level_end < b {
            current_red += sub;
        }
        if exited_down || exited_up {
            if exited_down {
                passage_down = Some(seg_end);
            } else {
                passage_up = Some(seg_end);
            }
            t = seg_end;
            u = u_new;
            if events.is_some() {
                step_events.push(PathEvent { time: seg_end, level: u_new, kind: PathEventKind::Exit });
            }
            flush_step_events(&mut events, step_events);
            break;
        }
        flush_step_events(&mut events, step_events);
        t += step;
        u = u_new;
    }
    if passage_down.is_none() && passage_up.is_none() {
        censored = true;
        t = horizon;
    }
    if current_red > 0.0 {
        excursions.push(current_red);
    }
    PathFunctionals {
        passage_down,
        passage_up,
        occupation,
        excursions,
        final_time: t,
        final_level: u,
        censored,
        events,
    }
}

/// Number of independent work units and paths per unit for a config:
/// antithetic runs work in mirrored pairs.
fn unit_count(cfg: &SimConfig) -> (usize, usize) {
    if cfg.antithetic {
        (cfg.n_paths.div_ceil(2), 2)
    } else {
        (cfg.n_paths, 1)
    }
}

/// Evaluates `per_unit` for every unit index in parallel, collecting results
/// in index order so the later reduction is independent of thread count.
fn run_units<T, F>(units: usize, per_unit: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let mut out: Vec<Option<T>> = (0..units).map(|_| None).collect();
    out.par_iter_mut()
        .enumerate()
        .for_each(|(k, slot)| *slot = Some(per_unit(k as u64)));
    out.into_iter().map(|slot| slot.expect("every unit filled")).collect()
}

/// Mean and standard error over per-unit values (sequential, fixed order).
fn column_estimate<'a>(
    values: impl Iterator<Item = &'a f64>,
    n_paths: usize,
    n_censored: usize,
) -> SimEstimate {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut count = 0usize;
    for &v in values {
        count += 1;
        let delta = v - mean;
        mean += delta / count as f64;
        m2 += delta * (v - mean);
    }
    let std_error = if count > 1 {
        (m2 / (count as f64 - 1.0) / count as f64).sqrt()
    } else {
        0.0
    };
    SimEstimate { mean, std_error, n_paths, n_censored }
}

/// The four exit estimates of one two-sided configuration.
#[derive(Debug, Clone, Copy)]
pub struct ExitEstimates {
    /// `E[e^{-q kappa_up}; up first]`.
    pub up_lt: SimEstimate,
    /// `E[e^{-q kappa_down}; down first]`.
    pub down_lt: SimEstimate,
    /// Probability of exiting upward first.
    pub up_prob: SimEstimate,
    /// Probability of exiting downward first.
    pub down_prob: SimEstimate,
}

/// Estimates the four exit quantities for the band `[a, c]` from `x`: the
/// time-discounted transforms at rate `q` and the raw exit probabilities.
pub fn estimate_exit(
    rm: &RefractedModel,
    q: f64,
    x: f64,
    a: f64,
    c: f64,
    cfg: &SimConfig,
) -> Result<ExitEstimates> {
    cfg.validate(&rm.x_model)?;
    check_refracted_ordering(rm, a, x, c)?;
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    let (units, per_unit) = unit_count(cfg);
    let rows: Vec<([f64; 4], usize)> = run_units(units, |k| {
        let mut acc = [0.0; 4];
        let mut censored = 0;
        for member in 0..per_unit {
            let mut rng = PathRng::for_path(cfg.seed, k, member == 1);
            let path = simulate_refracted_path(rm, x, a, c, cfg, false, None, &mut rng);
            if let Some(t) = path.passage_up {
                acc[0] += (-q * t).exp();
                acc[2] += 1.0;
            } else if let Some(t) = path.passage_down {
                acc[1] += (-q * t).exp();
                acc[3] += 1.0;
            } else {
                censored += 1;
            }
        }
        let inv = 1.0 / per_unit as f64;
        (acc.map(|v| v * inv), censored)
    });
    let n_paths = units * per_unit;
    let n_censored = rows.iter().map(|r| r.1).sum();
    let col = |i: usize| column_estimate(rows.iter().map(move |r| &r.0[i]), n_paths, n_censored);
    Ok(ExitEstimates { up_lt: col(0), down_lt: col(1), up_prob: col(2), down_prob: col(3) })
}

/// The two joint exit/occupation estimates of one configuration.
#[derive(Debug, Clone, Copy)]
pub struct JointExitEstimates {
    /// `E[e^{-p kappa - q occupation}; up first]`.
    pub up: SimEstimate,
    /// `E[e^{-p kappa - q occupation}; down first]`.
    pub down: SimEstimate,
}

/// Estimates the joint transform of the exit time (rate `p`) and the time
/// spent below the threshold before exit (rate `q`), for both exit events.
pub fn estimate_occupation_joint(
    rm: &RefractedModel,
    p: f64,
    q: f64,
    x: f64,
    a: f64,
    c: f64,
    cfg: &SimConfig,
) -> Result<JointExitEstimates> {
    cfg.validate(&rm.x_model)?;
    check_refracted_ordering(rm, a, x, c)?;
    if !(p >= 0.0 && q >= 0.0) {
        return Err(Error::Ordering(format!(
            "rates must be nonnegative; got p={p}, q={q}"
        )));
    }
    let (units, per_unit) = unit_count(cfg);
    let rows: Vec<([f64; 2], usize)> = run_units(units, |k| {
        let mut acc = [0.0; 2];
        let mut censored = 0;
        for member in 0..per_unit {
            let mut rng = PathRng::for_path(cfg.seed, k, member == 1);
            let path = simulate_refracted_path(rm, x, a, c, cfg, false, None, &mut rng);
            let weight = |t: f64| (-p * t - q * path.occupation).exp();
            if let Some(t) = path.passage_up {
                acc[0] += weight(t);
            } else if let Some(t) = path.passage_down {
                acc[1] += weight(t);
            } else {
                censored += 1;
            }
        }
        let inv = 1.0 / per_unit as f64;
        (acc.map(|v| v * inv), censored)
    });
    let n_paths = units * per_unit;
    let n_censored = rows.iter().map(|r| r.1).sum();
    let col = |i: usize| column_estimate(rows.iter().map(move |r| &r.0[i]), n_paths, n_censored);
    Ok(JointExitEstimates { up: col(0), down: col(1) })
}

/// Estimates the bankruptcy probability: each path draws one exponential
/// alarm budget at rate `q`; bankruptcy is passing strictly below 0, or the
/// accumulated time in `[0, b)` exceeding the budget, whichever first. At
/// `q = 0` the alarm never rings and the estimate is the ruin frequency.
///
/// Paths are absorbed at the safe upper barrier (see [`safe_upper`]); when
/// no barrier is safe the horizon censors instead, and the censoring count
/// is reported in the estimate.
pub fn estimate_bankruptcy(
    rm: &RefractedModel,
    x: f64,
    q: f64,
    cfg: &SimConfig,
) -> Result<SimEstimate> {
    cfg.validate(&rm.x_model)?;
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    let upper = safe_upper(rm).unwrap_or(f64::INFINITY);
    let (units, per_unit) = unit_count(cfg);
    let rows: Vec<(f64, usize)> = run_units(units, |k| {
        let mut acc = 0.0;
        let mut censored = 0;
        for member in 0..per_unit {
            let mut rng = PathRng::for_path(cfg.seed, k, member == 1);
            let budget = rng.exp(q);
            let path = simulate_refracted_path(rm, x, 0.0, upper, cfg, false, None, &mut rng);
            let bankrupt = path.passage_down.is_some() || path.occupation > budget;
            acc += f64::from(u8::from(bankrupt));
            censored += usize::from(path.censored);
        }
        (acc / per_unit as f64, censored)
    });
    let n_paths = units * per_unit;
    let n_censored = rows.iter().map(|r| r.1).sum();
    Ok(column_estimate(rows.iter().map(|r| &r.0), n_paths, n_censored))
}

/// Estimates the Parisian ruin probability: every excursion below the
/// threshold draws its own independent exponential clock at rate `q`, and
/// ruin means some excursion outlasted its clock. There is no lower
/// absorbing barrier — the path may wander below 0 and recover.
pub fn estimate_parisian(
    rm: &RefractedModel,
    x: f64,
    q: f64,
    cfg: &SimConfig,
) -> Result<SimEstimate> {
    cfg.validate(&rm.x_model)?;
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    let upper = safe_upper(rm).unwrap_or(f64::INFINITY);
    let (units, per_unit) = unit_count(cfg);
    let rows: Vec<(f64, usize)> = run_units(units, |k| {
        let mut acc = 0.0;
        let mut censored = 0;
        for member in 0..per_unit {
            let mut rng = PathRng::for_path(cfg.seed, k, member == 1);
            let path =
                simulate_refracted_path(rm, x, f64::NEG_INFINITY, upper, cfg, false, None, &mut rng);
            let mut ruined = false;
            for &excursion in &path.excursions {
                let clock = rng.exp(q);
                ruined = ruined || excursion > clock;
            }
            acc += f64::from(u8::from(ruined));
            censored += usize::from(path.censored);
        }
        (acc / per_unit as f64, censored)
    });
    let n_paths = units * per_unit;
    let n_censored = rows.iter().map(|r| r.1).sum();
    Ok(column_estimate(rows.iter().map(|r| &r.0), n_paths, n_censored))
}

/// Estimates `E_x[e^{-q * total time below the threshold}]` directly by
/// exponential weighting — the companion estimator to [`estimate_parisian`]
/// (one minus the other, in expectation, by the memorylessness of the
/// clocks), useful precisely because the two share no randomness mechanism.
pub fn estimate_total_occupation_lt(
    rm: &RefractedModel,
    x: f64,
    q: f64,
    cfg: &SimConfig,
) -> Result<SimEstimate> {
    cfg.validate(&rm.x_model)?;
    if !(q >= 0.0) {
        return Err(Error::Ordering(format!("rate q={q} must be nonnegative")));
    }
    let upper = safe_upper(rm).unwrap_or(f64::INFINITY);
    let (units, per_unit) = unit_count(cfg);
    let rows: Vec<(f64, usize)> = run_units(units, |k| {
        let mut acc = 0.0;
        let mut censored = 0;
        for member in 0..per_unit {
            let mut rng = PathRng::for_path(cfg.seed, k, member == 1);
            let path =
                simulate_refracted_path(rm, x, f64::NEG_INFINITY, upper, cfg, false, None, &mut rng);
            acc += (-q * path.occupation).exp();
            censored += usize::from(path.censored);
        }
        (acc / per_unit as f64, censored)
    });
    let n_paths = units * per_unit;
    let n_censored = rows.iter().map(|r| r.1).sum();
    Ok(column_estimate(rows.iter().map(|r| &r.0), n_paths, n_censored))
}

/// Estimates the per-unit-time mean of the unrefracted process by exact
/// sampling of `X_1` (Gaussian part plus compound Poisson over one time
/// unit) — a direct check on the model's declared drift.
pub fn estimate_increment_mean(m: &LevyModel, cfg: &SimConfig) -> Result<SimEstimate> {
    cfg.validate(m)?;
    let (units, per_unit) = unit_count(cfg);
    let rows: Vec<f64> = run_units(units, |k| {
        let mut acc = 0.0;
        for member in 0..per_unit {
            let mut rng = PathRng::for_path(cfg.seed, k, member == 1);
            let mut x1 = m.c;
            if m.sigma > 0.0 {
                x1 += m.sigma * rng.normal();
            }
            if m.jumps.eta > 0.0 {
                let mut t = rng.exp(m.jumps.eta);
                while t <= 1.0 {
                    let component = rng.pick_component(&m.jumps.terms);
                    x1 -= rng.exp(m.jumps.terms[component].1);
                    t += rng.exp(m.jumps.eta);
                }
            }
            acc += x1;
        }
        acc / per_unit as f64
    });
    let n_paths = units * per_unit;
    Ok(column_estimate(rows.iter(), n_paths, 0))
}
