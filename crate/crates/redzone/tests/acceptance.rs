//! Acceptance gate: the end-to-end checks the library must clear, each with
//! its stated tolerance and wall-clock budget. One test per criterion, in
//! order; every body prints a single summary line with its worst metric.
//!
//! The reference models throughout: premium drift 1.5 with unit-rate
//! mean-one exponential claims (bounded variation), and unit-drift
//! unit-variance Brownian motion; refraction 0.25 at threshold 1.

use std::time::{Duration, Instant};

use redzone::cli_io::verify::{cmd_verify, VerifyArgs, VerifySuite};
use redzone::cli_io::{cmd_simulate, reference_spec, OutFormat, SimulateArgs};
use redzone::levy_model::{JumpSpec, LevyModel, RefractedModel};
use redzone::mc_oracle::{
    estimate_bankruptcy, estimate_exit, estimate_occupation_joint, estimate_parisian,
    estimate_total_occupation_lt, SimConfig, SimEstimate,
};
use redzone::occupation::{
    bankruptcy_lt_ruin_finite, occ_lt_exit_down, occ_lt_exit_down_plus_variant, occ_lt_exit_up,
    occ_lt_reach_up, occupation_atom, occupation_density, prob_bankruptcy, prob_parisian,
    survival_lt, total_occupation_lt, OccupationQuery,
};
use redzone::quad::{integrate, QuadTol};
use redzone::refracted::{
    convolution_identity_residual, exit_down_u, exit_up_u, ruin_prob_u, ruin_prob_x,
    w_representation_residual,
};
use redzone::scale_fn::ScaleFunction;

fn cl_model() -> LevyModel {
    LevyModel::new(1.5, 0.0, JumpSpec::new(1.0, vec![(1.0, 1.0)]).unwrap()).unwrap()
}

fn bm_model() -> LevyModel {
    LevyModel::new(1.0, 1.0, JumpSpec::none()).unwrap()
}

fn cl_refracted() -> RefractedModel {
    RefractedModel::new(cl_model(), 0.25, 1.0).unwrap()
}

fn bm_refracted() -> RefractedModel {
    RefractedModel::new(bm_model(), 0.25, 1.0).unwrap()
}

/// Budget for quantities resolved by hitting a barrier.
fn paths_cfg(seed: u64) -> SimConfig {
    SimConfig { n_paths: 100_000, horizon: 1_000.0, dt: 1e-3, seed, antithetic: true }
}

/// Budget for infinite-horizon quantities: the horizon must outlast the
/// straggler tail of the first-passage times to the parking barrier.
fn patient_cfg(seed: u64) -> SimConfig {
    SimConfig { horizon: 5_000.0, ..paths_cfg(seed) }
}

fn within_budget(started: Instant, budget: Duration, name: &str) {
    let elapsed = started.elapsed();
    assert!(elapsed <= budget, "{name} took {elapsed:?}, budget {budget:?}");
}

fn se_gap(analytic: f64, est: &SimEstimate) -> f64 {
    (analytic - est.mean).abs() / est.std_error
}

#[test]
fn a01_scale_transform_round_trip() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for m in [cl_model(), bm_model()] {
        for q in [0.0, 0.5, 2.0] {
            let scale = ScaleFunction::new(&m, q).unwrap();
            let phi = m.right_inverse_phi(q).unwrap();
            for gap in [0.5, 1.0, 2.0] {
                let lambda = phi + gap;
                let numeric = integrate(
                    |x| scale.w_damped(lambda, x),
                    0.0,
                    45.0 / gap,
                    QuadTol::new(1e-14, 1e-8),
                )
                .unwrap();
                let exact = 1.0 / (m.laplace_exponent(lambda).unwrap() - q);
                let rel = (numeric - exact).abs() / exact.abs();
                assert!(rel <= 1e-6, "rate {q}, damping {lambda}: relative error {rel:.3e}");
                worst = worst.max(rel);
            }
        }
    }
    within_budget(started, Duration::from_secs(5), "transform round trip");
    println!("[PASS] scale transform round trip: worst relative error {worst:.3e} (<= 1e-6)");
}

#[test]
fn a02_classical_ruin_closed_form_and_simulation() {
    let started = Instant::now();
    let m = cl_model();
    // The refraction-free wrapper exposes the plain process to the path
    // engine; the threshold grid point is irrelevant at alpha = 0.
    let plain = RefractedModel::new(m.clone(), 0.0, 1.0).unwrap();
    let mut worst_abs = 0.0f64;
    let mut worst_se = 0.0f64;
    for (i, x) in [0.0f64, 1.0, 3.0].into_iter().enumerate() {
        let exact = (2.0 / 3.0) * (-x / 3.0).exp();
        let err = (ruin_prob_x(&m, x).unwrap() - exact).abs();
        assert!(err <= 1e-10, "closed form off by {err:.3e} at x={x}");
        worst_abs = worst_abs.max(err);
        // At a zero alarm rate the bankruptcy estimator reduces to the
        // frequency of ever passing below zero.
        let est = estimate_bankruptcy(&plain, x, 0.0, &patient_cfg(1_9001 + i as u64)).unwrap();
        let gap = se_gap(exact, &est);
        assert!(gap <= 3.0, "simulation {:.5} vs {exact:.5} at x={x}: {gap:.2} SE", est.mean);
        worst_se = worst_se.max(gap);
    }
    within_budget(started, Duration::from_secs(120), "classical ruin check");
    println!(
        "[PASS] classical ruin: worst closed-form error {worst_abs:.3e} (<= 1e-10), worst simulation gap {worst_se:.2} SE (<= 3)"
    );
}

#[test]
fn a03_identity_residuals_on_the_reference_grid() {
    let started = Instant::now();
    let rm = cl_refracted();
    let mut worst = 0.0f64;
    for (p, q) in [(0.0, 0.5), (0.3, 0.3), (0.5, 1.0), (1.0, 0.0), (2.0, 0.7)] {
        for x in [0.2, 0.6, 1.0, 1.5, 2.5] {
            let residual = convolution_identity_residual(&rm, p, q, x).unwrap();
            assert!(residual <= 1e-8, "convolution residual {residual:.3e} at (p={p}, q={q}, x={x})");
            worst = worst.max(residual);
        }
    }
    for q in [0.0, 0.3, 0.5, 1.0, 2.0] {
        for dx in [0.25, 0.5, 1.0, 1.5, 2.5] {
            let x = rm.b + dx;
            let residual = w_representation_residual(&rm, q, x).unwrap();
            assert!(residual <= 1e-8, "derivative-form residual {residual:.3e} at (q={q}, x={x})");
            worst = worst.max(residual);
        }
    }
    within_budget(started, Duration::from_secs(30), "identity residuals");
    println!("[PASS] identity residuals: worst {worst:.3e} over both 5x5 grids (<= 1e-8)");
}

#[test]
fn a04_exit_transforms_match_exact_simulation() {
    let started = Instant::now();
    let rm = cl_refracted();
    let (x, a, c) = (1.2, 0.0, 3.0);
    let mut worst = 0.0f64;
    for (i, q) in [0.0, 0.3].into_iter().enumerate() {
        let est = estimate_exit(&rm, q, x, a, c, &paths_cfg(4_7000 + i as u64)).unwrap();
        assert_eq!(est.up_lt.n_censored, 0, "two-sided exits must resolve");
        for (name, analytic, sim) in [
            ("upward transform", exit_up_u(&rm, q, x, a, c).unwrap(), &est.up_lt),
            ("downward transform", exit_down_u(&rm, q, x, a, c).unwrap(), &est.down_lt),
            ("upward probability", exit_up_u(&rm, 0.0, x, a, c).unwrap(), &est.up_prob),
            ("downward probability", exit_down_u(&rm, 0.0, x, a, c).unwrap(), &est.down_prob),
        ] {
            let gap = se_gap(analytic, sim);
            assert!(gap <= 3.0, "{name} at q={q}: {:.5} vs {analytic:.5} is {gap:.2} SE", sim.mean);
            worst = worst.max(gap);
        }
    }
    within_budget(started, Duration::from_secs(180), "exit transforms vs simulation");
    println!("[PASS] refracted exits vs exact simulation: worst gap {worst:.2} SE (<= 3)");
}

#[test]
fn a05_downward_sign_adjudicated_by_simulation_and_reported() {
    let started = Instant::now();
    let rm = cl_refracted();
    let query =
        OccupationQuery { model: rm.clone(), x: 1.2, a: 0.0, c: 3.0, p: 0.2, q: 0.5 };
    let minus = occ_lt_exit_down(&query).unwrap();
    let plus = occ_lt_exit_down_plus_variant(&query).unwrap();
    let est = estimate_occupation_joint(&rm, 0.2, 0.5, 1.2, 0.0, 3.0, &paths_cfg(0x51_6e)).unwrap();
    let minus_gap = se_gap(minus, &est.down);
    let plus_gap = se_gap(plus, &est.down);
    assert!(minus_gap <= 3.0, "subtracted form at {minus_gap:.2} SE");
    assert!(
        !(0.0..=1.0).contains(&plus) || plus_gap > 10.0,
        "added form must disqualify itself: value {plus:.4}, {plus_gap:.2} SE"
    );

    // Both candidate values and the simulator's vote belong in the
    // verification report.
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.toml");
    std::fs::write(&model_path, reference_spec().to_toml().unwrap()).unwrap();
    let report = cmd_verify(&VerifyArgs {
        model: model_path,
        suite: VerifySuite::Full,
        seed: Some(0x51_6e),
        paths: Some(20_000),
        tol: None,
        format: OutFormat::Json,
        out: Some(dir.path().join("report.json")),
    })
    .unwrap();
    let adj = &report.sign_adjudication;
    assert!((adj.minus_combination - minus).abs() < 1e-12);
    assert!((adj.plus_combination - plus).abs() < 1e-12);
    assert!(adj.oracle_mean.is_some() && adj.minus_distance_in_se.is_some());
    assert!(adj.plus_violates_unit_interval || adj.plus_distance_in_se.unwrap() > 10.0);
    assert!(adj.minus_distance_in_se.unwrap() <= 3.0);

    within_budget(started, Duration::from_secs(180), "sign adjudication");
    println!(
        "[PASS] downward-exit sign: subtracted at {minus_gap:.2} SE, added at {plus_gap:.1} SE and value {plus:.4}; both recorded in the verify report"
    );
}

#[test]
fn a06_degenerations_reach_their_targets() {
    let started = Instant::now();
    let tol = QuadTol::default();
    let mut worst = 0.0f64;
    let mut note = |err: f64, what: &str| {
        assert!(err <= 1e-9, "{what}: off by {err:.3e}");
        worst = worst.max(err);
    };

    // Refraction removed: rebuild every transform from the plain scale
    // functions of the driving process.
    for m in [cl_model(), bm_model()] {
        let rm0 = RefractedModel::new(m.clone(), 0.0, 1.0).unwrap();
        let b = rm0.b;
        let (a, c) = (0.0, 3.0);
        let (p, q) = (0.2, 0.5);
        let wq = ScaleFunction::new(&m, q).unwrap();
        let wp = ScaleFunction::new(&m, p).unwrap();
        let wpq = ScaleFunction::new(&m, p + q).unwrap();
        let w0 = ScaleFunction::new(&m, 0.0).unwrap();
        let mean = m.mean_per_unit_time();
        let g0 = |y: f64| {
            wpq.w(y) - q * integrate(|u| wp.w(y - u) * wpq.w(u), b, y, tol).unwrap()
        };
        let h0 = |y: f64| {
            wpq.z(y) - q * integrate(|u| wp.w(y - u) * wpq.z(u), b, y, tol).unwrap()
        };
        let gq = |y: f64| {
            wq.w(y) - q * integrate(|u| w0.w(y - u) * wq.w(u), b, y, tol).unwrap()
        };
        let hq = |y: f64| {
            wq.z(y) - q * integrate(|u| w0.w(y - u) * wq.z(u), b, y, tol).unwrap()
        };
        for x in [0.4, 1.2, 2.0] {
            let ratio = wq.w(x - a) / wq.w(c - a);
            note((exit_up_u(&rm0, q, x, a, c).unwrap() - ratio).abs(), "plain upward exit");
            note(
                (exit_down_u(&rm0, q, x, a, c).unwrap() - (wq.z(x - a) - wq.z(c - a) * ratio)).abs(),
                "plain downward exit",
            );
            let query = OccupationQuery { model: rm0.clone(), x, a, c, p, q };
            note((occ_lt_exit_up(&query).unwrap() - g0(x) / g0(c)).abs(), "joint upward transform");
            note(
                (occ_lt_exit_down(&query).unwrap() - (h0(x) - h0(c) / g0(c) * g0(x))).abs(),
                "joint downward transform",
            );
            note(
                (survival_lt(&rm0, x, q).unwrap() - mean * gq(x) / wq.z(b)).abs(),
                "survival transform",
            );
            let k0 = (mean + q * integrate(|y| wq.z(y), 0.0, b, tol).unwrap()) / wq.z(b);
            note(
                (bankruptcy_lt_ruin_finite(&rm0, x, q).unwrap() - (hq(x) - k0 * gq(x))).abs(),
                "ruin-side transform",
            );
            let phi = m.right_inverse_phi(q).unwrap();
            let head = (phi * (x - b)).exp();
            let corr =
                integrate(|u| (-phi * u).exp() * w0.w(u), 0.0, (x - b).max(0.0), tol).unwrap();
            note(
                (total_occupation_lt(&rm0, x, q).unwrap() - mean * phi / q * head * (1.0 - q * corr))
                    .abs(),
                "total-occupation transform",
            );
        }
    }

    // Rates sent to zero: the occupation discounts disappear.
    for rm in [cl_refracted(), bm_refracted()] {
        let (a, c) = (0.0, 3.0);
        for x in [0.4, 1.2, 2.0] {
            for p in [0.0, 0.3] {
                let query = OccupationQuery { model: rm.clone(), x, a, c, p, q: 0.0 };
                note(
                    (occ_lt_exit_up(&query).unwrap() - exit_up_u(&rm, p, x, a, c).unwrap()).abs(),
                    "joint transform at zero occupation rate",
                );
                note(
                    (occ_lt_exit_down(&query).unwrap() - exit_down_u(&rm, p, x, a, c).unwrap())
                        .abs(),
                    "joint downward transform at zero occupation rate",
                );
            }
            note(
                (prob_bankruptcy(&rm, x, 0.0).unwrap() - ruin_prob_u(&rm, x).unwrap()).abs(),
                "bankruptcy at zero rate",
            );
            note((total_occupation_lt(&rm, x, 0.0).unwrap() - 1.0).abs(), "total occupation at zero rate");
            note((occ_lt_reach_up(&rm, x, c, 0.0).unwrap() - 1.0).abs(), "reach-up at zero rate");
            note(prob_parisian(&rm, x, 0.0).unwrap().abs(), "Parisian ruin at zero rate");
        }
    }
    within_budget(started, Duration::from_secs(30), "degenerations");
    println!("[PASS] degenerations: worst deviation {worst:.3e} (<= 1e-9)");
}

#[test]
fn a07_bankruptcy_probability_matches_clock_simulation() {
    let started = Instant::now();
    let rm = cl_refracted();
    let mut worst = 0.0f64;
    let mut seed = 0x0b_70u64;
    for q in [0.2, 0.8] {
        for x in [0.5, 1.5] {
            seed += 1;
            let analytic = prob_bankruptcy(&rm, x, q).unwrap();
            assert!((analytic - (1.0 - survival_lt(&rm, x, q).unwrap())).abs() < 1e-15);
            let est = estimate_bankruptcy(&rm, x, q, &patient_cfg(seed)).unwrap();
            let gap = se_gap(analytic, &est);
            assert!(gap <= 3.0, "bankruptcy at (x={x}, q={q}): {:.5} vs {analytic:.5} is {gap:.2} SE", est.mean);
            worst = worst.max(gap);
        }
    }
    within_budget(started, Duration::from_secs(240), "bankruptcy vs simulation");
    println!("[PASS] bankruptcy probabilities vs alarm-clock simulation: worst gap {worst:.2} SE (<= 3)");
}

#[test]
fn a08_parisian_ruin_matches_clock_simulation_and_estimators_agree() {
    let started = Instant::now();
    let rm = cl_refracted();
    let mut worst = 0.0f64;
    let mut seed = 0x9a_0000u64;
    for q in [0.2, 0.8] {
        for x in [0.5, 1.5] {
            seed += 2;
            let analytic = prob_parisian(&rm, x, q).unwrap();
            let clocks = estimate_parisian(&rm, x, q, &patient_cfg(seed)).unwrap();
            let gap = se_gap(analytic, &clocks);
            assert!(gap <= 3.0, "Parisian at (x={x}, q={q}): {:.5} vs {analytic:.5} is {gap:.2} SE", clocks.mean);
            worst = worst.max(gap);

            // Independent estimator: one minus the sampled transform of the
            // total time in the red, on disjoint randomness.
            let transform = estimate_total_occupation_lt(&rm, x, q, &patient_cfg(seed + 1)).unwrap();
            let other = 1.0 - transform.mean;
            let combined = clocks.std_error.hypot(transform.std_error);
            let agreement = (clocks.mean - other).abs() / combined;
            assert!(
                agreement <= 3.0,
                "estimators disagree at (x={x}, q={q}): {:.5} vs {other:.5} is {agreement:.2} combined SE",
                clocks.mean
            );
            worst = worst.max(agreement);
        }
    }
    within_budget(started, Duration::from_secs(240), "Parisian ruin vs simulation");
    println!("[PASS] Parisian ruin vs excursion-clock simulation: worst gap {worst:.2} SE (<= 3, both estimators)");
}

#[test]
fn a09_brownian_occupation_law_normalizes_and_transforms() {
    let started = Instant::now();
    let rm = bm_refracted();
    let x = rm.b + 0.2;
    let atom = occupation_atom(&rm, x).unwrap();
    let density_tol = QuadTol::new(1e-9, 1e-8);

    // March dyadic segments of the duration axis until the exponential
    // tail of the density stops contributing.
    let mut mass = atom;
    let mut lo = 0.0f64;
    let mut hi = 0.25f64;
    for _ in 0..24 {
        let piece =
            integrate(|r| occupation_density(&rm, x, r).unwrap_or(0.0), lo, hi, density_tol)
                .unwrap();
        mass += piece;
        if hi > 8.0 && piece.abs() < 1e-9 {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    let mass_err = (mass - 1.0).abs();
    assert!(mass_err <= 1e-6, "atom {atom:.6} + density mass integrates to {mass:.8}");

    let mut worst_transform = 0.0f64;
    for q in [0.5, 1.0] {
        let from_density = atom
            + integrate(
                |r| (-q * r).exp() * occupation_density(&rm, x, r).unwrap_or(0.0),
                0.0,
                hi,
                density_tol,
            )
            .unwrap();
        let direct = total_occupation_lt(&rm, x, q).unwrap();
        let err = (from_density - direct).abs();
        assert!(err <= 1e-4, "transform mismatch {err:.3e} at q={q}");
        worst_transform = worst_transform.max(err);
    }
    within_budget(started, Duration::from_secs(120), "Brownian occupation law");
    println!(
        "[PASS] Brownian occupation law: mass balance off by {mass_err:.3e} (<= 1e-6), transform off by {worst_transform:.3e} (<= 1e-4)"
    );
}

#[test]
fn a10_simulation_outputs_identical_across_thread_counts() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.toml");
    std::fs::write(&model_path, reference_spec().to_toml().unwrap()).unwrap();

    let mut outputs = Vec::new();
    for threads in [1usize, 4, 8] {
        let out = dir.path().join(format!("est-{threads}.json"));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            cmd_simulate(&SimulateArgs {
                model: model_path.clone(),
                target: "exit".into(),
                x: Some(1.2),
                a: Some(0.0),
                c: Some(3.0),
                p: None,
                q: Some(0.3),
                paths: Some(20_000),
                seed: Some(0xD_E7),
                horizon: None,
                dt: None,
                antithetic: None,
                trace: None,
                trace_paths: 8,
                format: OutFormat::Json,
                out: Some(out.clone()),
            })
            .unwrap();
        });
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1], "1 vs 4 worker threads");
    assert_eq!(outputs[1], outputs[2], "4 vs 8 worker threads");
    within_budget(started, Duration::from_secs(120), "thread determinism");
    println!("[PASS] simulate outputs byte-identical across 1, 4 and 8 worker threads");
}
