//! Command-line surface: model-file ingestion, result records, and the
//! `eval` / `verify` / `simulate` / `roots` commands.
//!
//! Model files are TOML by default (JSON accepted when the file ends in
//! `.json`), with three blocks:
//!
//! ```toml
//! [process]              # the unrefracted process
//! drift = 1.5
//! sigma = 0.0
//! jump_rate = 1.0
//! jump_terms = [[1.0, 1.0]]   # [weight, rate] mixture rows
//!
//! [refraction]
//! alpha = 0.25
//! threshold = 1.0
//!
//! [defaults]             # optional; tolerances and simulation budget
//! residual_tol = 1e-8
//! [defaults.sim]
//! n_paths = 100000
//! ```
//!
//! Exit-code contract (enforced in `main`): 0 success, 2 input error
//! (unreadable/invalid spec, unknown operation, missing parameter), 3 domain
//! error from an evaluation (bad orderings, violated preconditions), 4
//! verification failure.

pub mod verify;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::levy_model::{JumpSpec, LevyModel, RefractedModel};
use crate::mc_oracle::{
    estimate_bankruptcy, estimate_exit, estimate_increment_mean, estimate_occupation_joint,
    estimate_parisian, estimate_total_occupation_lt, safe_upper, simulate_refracted_path,
    PathEventKind, PathRng, SimConfig, SimEstimate,
};
use crate::occupation::{
    bankruptcy_lt_ruin_finite, occ_lt_exit_down, occ_lt_exit_up, occ_lt_reach_up, occupation_atom,
    occupation_density, prob_bankruptcy, prob_parisian, survival_lt, total_occupation_lt,
    OccupationQuery,
};
use crate::refracted::{
    exit_down_u, exit_down_x, exit_up_u, exit_up_x, ruin_prob_u, ruin_prob_x, RefractedScaleEval,
};
use crate::scale_fn::{scale_roots, ScaleFunction};

/// A failure at the command layer, carrying the process exit code the
/// contract assigns to it.
#[derive(Debug)]
pub struct CliError {
    /// 2 for input errors, 3 for domain errors, 4 for verification failures.
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError { code: 3, message: err.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

/// Output table format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutFormat {
    #[default]
    Csv,
    Json,
}

/// The `[process]` block: the unrefracted spectrally negative process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessBlock {
    pub drift: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub jump_rate: f64,
    /// `[weight, rate]` rows of the jump-size mixture.
    #[serde(default)]
    pub jump_terms: Vec<(f64, f64)>,
}

/// The `[refraction]` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefractionBlock {
    /// Drift reduction applied above the threshold.
    pub alpha: f64,
    /// The refraction threshold `b`.
    pub threshold: f64,
}

/// The optional `[defaults]` block: tolerances and the simulation budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefaultsBlock {
    /// Bound for the identity-residual checks in `verify`.
    pub residual_tol: f64,
    /// Absolute quadrature tolerance for integrals the CLI itself performs.
    pub quad_abs_tol: f64,
    /// Relative quadrature tolerance for the same.
    pub quad_rel_tol: f64,
    /// Monte Carlo budget for `simulate` and the full `verify` suite.
    pub sim: SimConfig,
}

impl Default for DefaultsBlock {
    fn default() -> Self {
        DefaultsBlock {
            residual_tol: 1e-8,
            quad_abs_tol: 1e-10,
            quad_rel_tol: 1e-9,
            sim: SimConfig::default(),
        }
    }
}

/// A parsed model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecFile {
    pub process: ProcessBlock,
    pub refraction: RefractionBlock,
    #[serde(default)]
    pub defaults: DefaultsBlock,
}

impl ModelSpecFile {
    /// Parses a spec from text; `json` selects the alternative format.
    /// Parse errors are returned with the position information the format
    /// library provides (line/column for TOML).
    pub fn from_str(text: &str, json: bool) -> std::result::Result<Self, CliError> {
        if json {
            serde_json::from_str(text)
                .map_err(|e| CliError::input(format!("invalid JSON model spec: {e}")))
        } else {
            toml::from_str(text)
                .map_err(|e| CliError::input(format!("invalid model spec: {e}")))
        }
    }

    /// Reads and parses a spec file, picking the format from the extension.
    pub fn load(path: &Path) -> std::result::Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::input(format!("cannot read model spec {}: {e}", path.display()))
        })?;
        let json = path.extension().is_some_and(|ext| ext == "json");
        Self::from_str(&text, json)
    }

    /// Re-emits the model file as TOML; parsing the output yields an identical
    /// in-memory value (round-trip invariant).
    pub fn to_toml(&self) -> std::result::Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::input(format!("cannot emit spec: {e}")))
    }

    /// Builds the validated model; invariant violations in the file are
    /// input errors, not domain errors.
    pub fn build(&self) -> std::result::Result<RefractedModel, CliError> {
        let build = || -> Result<RefractedModel> {
            let jumps = if self.process.jump_rate == 0.0 && self.process.jump_terms.is_empty() {
                JumpSpec::none()
            } else {
                JumpSpec::new(self.process.jump_rate, self.process.jump_terms.clone())?
            };
            let model = LevyModel::new(self.process.drift, self.process.sigma, jumps)?;
            RefractedModel::new(model, self.refraction.alpha, self.refraction.threshold)
        };
        build().map_err(|e| CliError::input(format!("model spec violates an invariant: {e}")))
    }

    /// Hash identifying the model (process + refraction blocks only; the
    /// defaults block configures runs, not the model). First 12 hex digits
    /// of a SHA-256 over the canonical JSON encoding.
    pub fn model_hash(&self) -> String {
        let canonical = serde_json::to_string(&(&self.process, &self.refraction))
            .expect("model blocks are plain data");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// One output row: an operation, the parameter tuple it was evaluated at,
/// and its analytic and/or simulated values. Every record carries the model
/// hash and library version; wall time is kept in memory for diagnostics
/// but never serialized, so identical inputs give identical output bytes.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub operation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_censored: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub antithetic: Option<bool>,
    pub model_hash: String,
    pub version: String,
    #[serde(skip)]
    pub wall_time: std::time::Duration,
}

impl ResultRecord {
    fn new(operation: impl Into<String>, model_hash: &str) -> Self {
        ResultRecord {
            operation: operation.into(),
            x: None,
            a: None,
            c: None,
            p: None,
            q: None,
            r: None,
            analytic: None,
            oracle_mean: None,
            oracle_std_error: None,
            oracle_paths: None,
            oracle_censored: None,
            seed: None,
            horizon: None,
            dt: None,
            antithetic: None,
            model_hash: model_hash.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time: std::time::Duration::ZERO,
        }
    }

    fn with_estimate(mut self, est: &SimEstimate, cfg: &SimConfig, dt_used: bool) -> Self {
        self.oracle_mean = Some(est.mean);
        self.oracle_std_error = Some(est.std_error);
        self.oracle_paths = Some(est.n_paths);
        self.oracle_censored = Some(est.n_censored);
        self.seed = Some(cfg.seed);
        self.horizon = Some(cfg.horizon);
        self.dt = dt_used.then_some(cfg.dt);
        self.antithetic = Some(cfg.antithetic);
        self
    }
}

const CSV_HEADER: &[&str] = &[
    "operation", "x", "a", "c", "p", "q", "r", "analytic", "oracle_mean", "oracle_std_error",
    "oracle_paths", "oracle_censored", "seed", "horizon", "dt", "antithetic", "model_hash",
    "version",
];

fn opt_num<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders records in the requested format. CSV is tidy (one record per
/// row, fixed column set, empty cells for fields a record does not carry).
pub fn render_records(records: &[ResultRecord], format: OutFormat) -> String {
    match format {
        OutFormat::Json => {
            let mut text =
                serde_json::to_string_pretty(records).expect("records are plain data");
            text.push('\n');
            text
        }
        OutFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(CSV_HEADER).expect("in-memory write");
            for rec in records {
                wtr.write_record([
                    rec.operation.clone(),
                    opt_num(rec.x),
                    opt_num(rec.a),
                    opt_num(rec.c),
                    opt_num(rec.p),
                    opt_num(rec.q),
                    opt_num(rec.r),
                    opt_num(rec.analytic),
                    opt_num(rec.oracle_mean),
                    opt_num(rec.oracle_std_error),
                    opt_num(rec.oracle_paths),
                    opt_num(rec.oracle_censored),
                    opt_num(rec.seed),
                    opt_num(rec.horizon),
                    opt_num(rec.dt),
                    opt_num(rec.antithetic),
                    rec.model_hash.clone(),
                    rec.version.clone(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(wtr.into_inner().expect("in-memory flush"))
                .expect("csv output is utf-8")
        }
    }
}

/// Writes rendered output to the file or stdout.
pub fn write_output(text: &str, out: Option<&Path>) -> std::result::Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| {
            CliError::input(format!("cannot write output {}: {e}", path.display()))
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Parses a grid argument: a single number, a comma list `v1,v2,...`, or an
/// inclusive range `start:stop:count`.
pub fn parse_grid(text: &str) -> std::result::Result<Vec<f64>, String> {
    let bad = |t: &str| format!("cannot parse `{t}` (expected a number, `v1,v2,...`, or `start:stop:count`)");
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(text));
        }
        let start: f64 = parts[0].parse().map_err(|_| bad(text))?;
        let stop: f64 = parts[1].parse().map_err(|_| bad(text))?;
        let count: usize = parts[2].parse().map_err(|_| bad(text))?;
        if count == 0 {
            return Err("a range grid needs at least one point".into());
        }
        if count == 1 {
            return Ok(vec![start]);
        }
        let step = (stop - start) / (count - 1) as f64;
        return Ok((0..count).map(|i| start + step * i as f64).collect());
    }
    text.split(',')
        .map(|piece| piece.trim().parse::<f64>().map_err(|_| bad(text)))
        .collect()
}

/// The grid arguments of `eval`, one optional axis per parameter.
#[derive(Debug, Clone, Default)]
pub struct GridSet {
    pub x: Option<Vec<f64>>,
    pub a: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
}

/// One resolved evaluation point.
#[derive(Debug, Clone, Copy)]
struct Tuple {
    x: f64,
    a: f64,
    c: f64,
    p: f64,
    q: f64,
    r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    X,
    A,
    C,
    P,
    Q,
    R,
}

impl Param {
    fn flag(self) -> &'static str {
        match self {
            Param::X => "--x",
            Param::A => "--a",
            Param::C => "--c",
            Param::P => "--p",
            Param::Q => "--q",
            Param::R => "--r",
        }
    }
}

/// An analytic operation exposed through `eval`.
struct EvalOp {
    name: &'static str,
    needs: &'static [Param],
    summary: &'static str,
    run: fn(&RefractedModel, Tuple) -> Result<f64>,
}

/// Every operation `eval` can dispatch. Names describe the quantity; `-x`
/// suffixes mean the unrefracted process.
static EVAL_OPS: &[EvalOp] = &[
    EvalOp {
        name: "scale-w",
        needs: &[Param::X, Param::Q],
        summary: "scale function W of the unrefracted process",
        run: |rm, t| Ok(ScaleFunction::new(&rm.x_model, t.q)?.w(t.x)),
    },
    EvalOp {
        name: "scale-z",
        needs: &[Param::X, Param::Q],
        summary: "scale function Z of the unrefracted process",
        run: |rm, t| Ok(ScaleFunction::new(&rm.x_model, t.q)?.z(t.x)),
    },
    EvalOp {
        name: "refracted-w",
        needs: &[Param::X, Param::A, Param::Q],
        summary: "refracted scale function w(x; a)",
        run: |rm, t| RefractedScaleEval::new(rm, t.q, t.a)?.little_w(t.x),
    },
    EvalOp {
        name: "refracted-z",
        needs: &[Param::X, Param::A, Param::Q],
        summary: "refracted scale function z(x; a)",
        run: |rm, t| RefractedScaleEval::new(rm, t.q, t.a)?.little_z(t.x),
    },
    EvalOp {
        name: "exit-up-x",
        needs: &[Param::X, Param::A, Param::C, Param::Q],
        summary: "discounted upward two-sided exit of the unrefracted process",
        run: |rm, t| exit_up_x(&rm.x_model, t.q, t.x, t.a, t.c),
    },
    EvalOp {
        name: "exit-down-x",
        needs: &[Param::X, Param::A, Param::C, Param::Q],
        summary: "discounted downward two-sided exit of the unrefracted process",
        run: |rm, t| exit_down_x(&rm.x_model, t.q, t.x, t.a, t.c),
    },
    EvalOp {
        name: "exit-up",
        needs: &[Param::X, Param::A, Param::C, Param::Q],
        summary: "discounted upward two-sided exit of the refracted process",
        run: |rm, t| exit_up_u(rm, t.q, t.x, t.a, t.c),
    },
    EvalOp {
        name: "exit-down",
        needs: &[Param::X, Param::A, Param::C, Param::Q],
        summary: "discounted downward two-sided exit of the refracted process",
        run: |rm, t| exit_down_u(rm, t.q, t.x, t.a, t.c),
    },
    EvalOp {
        name: "ruin-x",
        needs: &[Param::X],
        summary: "ruin probability of the unrefracted process",
        run: |rm, t| ruin_prob_x(&rm.x_model, t.x),
    },
    EvalOp {
        name: "ruin",
        needs: &[Param::X],
        summary: "ruin probability of the refracted process",
        run: |rm, t| ruin_prob_u(rm, t.x),
    },
    EvalOp {
        name: "occ-exit-up",
        needs: &[Param::X, Param::A, Param::C, Param::P, Param::Q],
        summary: "joint transform of exit time (rate p) and time below the threshold (rate q), upward exit",
        run: |rm, t| {
            occ_lt_exit_up(&OccupationQuery { model: rm.clone(), x: t.x, a: t.a, c: t.c, p: t.p, q: t.q })
        },
    },
    EvalOp {
        name: "occ-exit-down",
        needs: &[Param::X, Param::A, Param::C, Param::P, Param::Q],
        summary: "joint transform of exit time (rate p) and time below the threshold (rate q), downward exit",
        run: |rm, t| {
            occ_lt_exit_down(&OccupationQuery { model: rm.clone(), x: t.x, a: t.a, c: t.c, p: t.p, q: t.q })
        },
    },
    EvalOp {
        name: "ruin-occupation-lt",
        needs: &[Param::X, Param::Q],
        summary: "transform of the time below the threshold before ruin, on ruin in finite time",
        run: |rm, t| bankruptcy_lt_ruin_finite(rm, t.x, t.q),
    },
    EvalOp {
        name: "survival-lt",
        needs: &[Param::X, Param::Q],
        summary: "transform of the total time below the threshold, on never ruining",
        run: |rm, t| survival_lt(rm, t.x, t.q),
    },
    EvalOp {
        name: "bankruptcy",
        needs: &[Param::X, Param::Q],
        summary: "bankruptcy probability under an exponential alarm at rate q in the red zone",
        run: |rm, t| prob_bankruptcy(rm, t.x, t.q),
    },
    EvalOp {
        name: "reach-up-occupation-lt",
        needs: &[Param::X, Param::C, Param::Q],
        summary: "transform of the time below the threshold before first reaching level c",
        run: |rm, t| occ_lt_reach_up(rm, t.x, t.c, t.q),
    },
    EvalOp {
        name: "total-occupation-lt",
        needs: &[Param::X, Param::Q],
        summary: "transform of the total time ever spent below the threshold",
        run: |rm, t| total_occupation_lt(rm, t.x, t.q),
    },
    EvalOp {
        name: "parisian",
        needs: &[Param::X, Param::Q],
        summary: "Parisian ruin probability with exponential excursion clocks at rate q",
        run: |rm, t| prob_parisian(rm, t.x, t.q),
    },
    EvalOp {
        name: "occupation-atom",
        needs: &[Param::X],
        summary: "probability that the total time below the threshold is zero",
        run: |rm, t| occupation_atom(rm, t.x),
    },
    EvalOp {
        name: "occupation-density",
        needs: &[Param::X, Param::R],
        summary: "density of the total time below the threshold at duration r",
        run: |rm, t| occupation_density(rm, t.x, t.r),
    },
];

fn op_usage() -> String {
    let mut text = String::from("available operations:\n");
    for op in EVAL_OPS {
        let needs: Vec<&str> = op.needs.iter().map(|p| p.flag()).collect();
        let _ = writeln!(text, "  {:<24} {}  (needs {})", op.name, op.summary, needs.join(", "));
    }
    text
}

/// Arguments of the `eval` command.
#[derive(Debug)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub operation: String,
    pub grids: GridSet,
    pub format: OutFormat,
    pub out: Option<PathBuf>,
}

/// Evaluates one analytic operation over the Cartesian product of the given
/// grids, in deterministic tuple order (x, a, c, p, q, r, outermost first).
/// Grid cells are evaluated in parallel; output order is tuple order.
pub fn cmd_eval(args: &EvalArgs) -> std::result::Result<Vec<ResultRecord>, CliError> {
    let spec = ModelSpecFile::load(&args.model)?;
    let rm = spec.build()?;
    let hash = spec.model_hash();

    let op = EVAL_OPS
        .iter()
        .find(|op| op.name == args.operation)
        .ok_or_else(|| {
            CliError::input(format!("unknown operation `{}`\n{}", args.operation, op_usage()))
        })?;

    let axis = |param: Param,
                given: &Option<Vec<f64>>|
     -> std::result::Result<Vec<f64>, CliError> {
        let needed = op.needs.contains(&param);
        match (needed, given) {
            (true, Some(values)) => Ok(values.clone()),
            (true, None) => Err(CliError::input(format!(
                "operation `{}` requires {}",
                op.name,
                param.flag()
            ))),
            (false, Some(_)) => Err(CliError::input(format!(
                "operation `{}` does not take {}",
                op.name,
                param.flag()
            ))),
            // Unused axes collapse to a single placeholder so the product
            // below stays a plain nest.
            (false, None) => Ok(vec![f64::NAN]),
        }
    };
    let xs = axis(Param::X, &args.grids.x)?;
    let aas = axis(Param::A, &args.grids.a)?;
    let cs = axis(Param::C, &args.grids.c)?;
    let ps = axis(Param::P, &args.grids.p)?;
    let qs = axis(Param::Q, &args.grids.q)?;
    let rs = axis(Param::R, &args.grids.r)?;

    let mut tuples = Vec::new();
    for &x in &xs {
        for &a in &aas {
            for &c in &cs {
                for &p in &ps {
                    for &q in &qs {
                        for &r in &rs {
                            tuples.push(Tuple { x, a, c, p, q, r });
                        }
                    }
                }
            }
        }
    }

    let values: Vec<(Result<f64>, std::time::Duration)> = tuples
        .par_iter()
        .map(|t| {
            let started = std::time::Instant::now();
            let value = (op.run)(&rm, *t);
            (value, started.elapsed())
        })
        .collect();

    let mut records = Vec::with_capacity(tuples.len());
    for (t, (value, wall)) in tuples.iter().zip(values) {
        let value = value.map_err(|e| CliError {
            code: 3,
            message: format!(
                "operation `{}` failed at ({}): {e}",
                op.name,
                describe_tuple(op.needs, t)
            ),
        })?;
        let mut rec = ResultRecord::new(op.name, &hash);
        for param in op.needs {
            match param {
                Param::X => rec.x = Some(t.x),
                Param::A => rec.a = Some(t.a),
                Param::C => rec.c = Some(t.c),
                Param::P => rec.p = Some(t.p),
                Param::Q => rec.q = Some(t.q),
                Param::R => rec.r = Some(t.r),
            }
        }
        rec.analytic = Some(value);
        rec.wall_time = wall;
        records.push(rec);
    }
    write_output(&render_records(&records, args.format), args.out.as_deref())?;
    Ok(records)
}

fn describe_tuple(needs: &[Param], t: &Tuple) -> String {
    let mut parts = Vec::new();
    for param in needs {
        let (name, value) = match param {
            Param::X => ("x", t.x),
            Param::A => ("a", t.a),
            Param::C => ("c", t.c),
            Param::P => ("p", t.p),
            Param::Q => ("q", t.q),
            Param::R => ("r", t.r),
        };
        parts.push(format!("{name}={value}"));
    }
    parts.join(", ")
}

/// Arguments of the `simulate` command.
#[derive(Debug)]
pub struct SimulateArgs {
    pub model: PathBuf,
    pub target: String,
    pub x: Option<f64>,
    pub a: Option<f64>,
    pub c: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub antithetic: Option<bool>,
    pub trace: Option<PathBuf>,
    pub trace_paths: usize,
    pub format: OutFormat,
    pub out: Option<PathBuf>,
}

const SIM_TARGETS: &str = "available targets: exit (needs --x --a --c --q), joint-exit (needs \
--x --a --c --p --q), bankruptcy (--x --q), parisian (--x --q), total-occupation-lt (--x --q), \
increment-mean (no parameters)";

/// Runs the Monte Carlo oracle for one target quantity and emits the
/// estimate records, with the analytic value alongside when the closed form
/// applies. Output bytes depend only on the model file, target and overrides.
pub fn cmd_simulate(args: &SimulateArgs) -> std::result::Result<Vec<ResultRecord>, CliError> {
    let spec = ModelSpecFile::load(&args.model)?;
    let rm = spec.build()?;
    let hash = spec.model_hash();
    let mut cfg = spec.defaults.sim.clone();
    if let Some(n) = args.paths {
        cfg.n_paths = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(horizon) = args.horizon {
        cfg.horizon = horizon;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(antithetic) = args.antithetic {
        cfg.antithetic = antithetic;
    }
    let dt_used = rm.x_model.sigma > 0.0;

    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| {
            CliError::input(format!("target `{}` requires {flag}", args.target))
        })
    };

    // The analytic companion is attached when its preconditions hold; a
    // model outside them (say, one violating net profit) can still be
    // simulated, so those errors are not fatal here.
    let mut records = Vec::new();
    match args.target.as_str() {
        "exit" => {
            let (x, a, c) = (need(args.x, "--x")?, need(args.a, "--a")?, need(args.c, "--c")?);
            let q = need(args.q, "--q")?;
            let est = estimate_exit(&rm, q, x, a, c, &cfg)?;
            let mut push = |name: &str, est: &SimEstimate, analytic: Result<f64>| {
                let mut rec = ResultRecord::new(name, &hash).with_estimate(est, &cfg, dt_used);
                rec.x = Some(x);
                rec.a = Some(a);
                rec.c = Some(c);
                rec.q = Some(q);
                rec.analytic = analytic.ok();
                records.push(rec);
            };
            push("exit-up-lt", &est.up_lt, exit_up_u(&rm, q, x, a, c));
            push("exit-down-lt", &est.down_lt, exit_down_u(&rm, q, x, a, c));
            push("exit-up-prob", &est.up_prob, exit_up_u(&rm, 0.0, x, a, c));
            push("exit-down-prob", &est.down_prob, exit_down_u(&rm, 0.0, x, a, c));
        }
        "joint-exit" => {
            let (x, a, c) = (need(args.x, "--x")?, need(args.a, "--a")?, need(args.c, "--c")?);
            let (p, q) = (need(args.p, "--p")?, need(args.q, "--q")?);
            let est = estimate_occupation_joint(&rm, p, q, x, a, c, &cfg)?;
            let query =
                OccupationQuery { model: rm.clone(), x, a, c, p, q };
            let mut push = |name: &str, est: &SimEstimate, analytic: Result<f64>| {
                let mut rec = ResultRecord::new(name, &hash).with_estimate(est, &cfg, dt_used);
                rec.x = Some(x);
                rec.a = Some(a);
                rec.c = Some(c);
                rec.p = Some(p);
                rec.q = Some(q);
                rec.analytic = analytic.ok();
                records.push(rec);
            };
            push("occ-exit-up", &est.up, occ_lt_exit_up(&query));
            push("occ-exit-down", &est.down, occ_lt_exit_down(&query));
        }
        "bankruptcy" => {
            let (x, q) = (need(args.x, "--x")?, need(args.q, "--q")?);
            let est = estimate_bankruptcy(&rm, x, q, &cfg)?;
            let mut rec =
                ResultRecord::new("bankruptcy", &hash).with_estimate(&est, &cfg, dt_used);
            rec.x = Some(x);
            rec.q = Some(q);
            rec.analytic = prob_bankruptcy(&rm, x, q).ok();
            records.push(rec);
        }
        "parisian" => {
            let (x, q) = (need(args.x, "--x")?, need(args.q, "--q")?);
            let est = estimate_parisian(&rm, x, q, &cfg)?;
            let mut rec = ResultRecord::new("parisian", &hash).with_estimate(&est, &cfg, dt_used);
            rec.x = Some(x);
            rec.q = Some(q);
            rec.analytic = prob_parisian(&rm, x, q).ok();
            records.push(rec);
        }
        "total-occupation-lt" => {
            let (x, q) = (need(args.x, "--x")?, need(args.q, "--q")?);
            let est = estimate_total_occupation_lt(&rm, x, q, &cfg)?;
            let mut rec = ResultRecord::new("total-occupation-lt", &hash)
                .with_estimate(&est, &cfg, dt_used);
            rec.x = Some(x);
            rec.q = Some(q);
            rec.analytic = total_occupation_lt(&rm, x, q).ok();
            records.push(rec);
        }
        "increment-mean" => {
            let est = estimate_increment_mean(&rm.x_model, &cfg)?;
            let mut rec = ResultRecord::new("increment-mean", &hash)
                .with_estimate(&est, &cfg, dt_used);
            rec.analytic = Some(rm.x_model.mean_per_unit_time());
            records.push(rec);
        }
        other => {
            return Err(CliError::input(format!("unknown target `{other}`\n{SIM_TARGETS}")));
        }
    }

    if let Some(trace_path) = &args.trace {
        write_trace(&rm, &cfg, args, trace_path)?;
    }
    write_output(&render_records(&records, args.format), args.out.as_deref())?;
    Ok(records)
}

/// Dumps the event traces of the first few paths of the target's
/// configuration as tidy CSV (path, time, level, kind).
fn write_trace(
    rm: &RefractedModel,
    cfg: &SimConfig,
    args: &SimulateArgs,
    path: &Path,
) -> std::result::Result<(), CliError> {
    let (lower, upper, alarmed) = match args.target.as_str() {
        "exit" | "joint-exit" => (args.a.unwrap_or(0.0), args.c.unwrap_or(f64::INFINITY), false),
        "bankruptcy" => (0.0, safe_upper(rm).unwrap_or(f64::INFINITY), true),
        "parisian" | "total-occupation-lt" => {
            (f64::NEG_INFINITY, safe_upper(rm).unwrap_or(f64::INFINITY), false)
        }
        other => {
            return Err(CliError::input(format!(
                "target `{other}` has no path trace (nothing path-shaped to dump)"
            )));
        }
    };
    let x0 = args.x.unwrap_or(0.0);
    let q = args.q.unwrap_or(0.0);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["path", "time", "level", "kind"]).expect("in-memory write");
    for index in 0..args.trace_paths {
        let mut rng = PathRng::for_path(cfg.seed, index as u64, false);
        // Mirror the estimators' stream discipline: the bankruptcy alarm
        // budget is the first draw of the path's stream.
        let alarm = alarmed.then(|| rng.exp(q));
        let traced = simulate_refracted_path(rm, x0, lower, upper, cfg, true, alarm, &mut rng);
        for event in traced.events.expect("trace requested") {
            let kind = match event.kind {
                PathEventKind::Jump => "jump",
                PathEventKind::RefractionCrossing => "refraction-crossing",
                PathEventKind::Exit => "exit",
                PathEventKind::ClockRing => "clock-ring",
            };
            wtr.write_record([
                index.to_string(),
                event.time.to_string(),
                event.level.to_string(),
                kind.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    let bytes = wtr.into_inner().expect("in-memory flush");
    std::fs::write(path, bytes)
        .map_err(|e| CliError::input(format!("cannot write trace {}: {e}", path.display())))
}

/// One row of the `roots` dump.
#[derive(Debug, Clone, Serialize)]
pub struct RootRecord {
    pub q: f64,
    pub index: usize,
    pub root: f64,
    pub weight: f64,
    /// True for the largest root (the right-inverse of the exponent at q).
    pub is_rightmost: bool,
    pub model_hash: String,
    pub version: String,
}

/// Dumps the exponent roots and partial-fraction weights behind the scale
/// functions, one row per root per requested rate.
pub fn cmd_roots(
    model: &Path,
    qs: &[f64],
    format: OutFormat,
    out: Option<&Path>,
) -> std::result::Result<Vec<RootRecord>, CliError> {
    let spec = ModelSpecFile::load(model)?;
    let rm = spec.build()?;
    let hash = spec.model_hash();
    let mut rows = Vec::new();
    for &q in qs {
        let set = scale_roots(&rm.x_model, q)?;
        for (index, (&root, &weight)) in set.roots.iter().zip(&set.weights).enumerate() {
            rows.push(RootRecord {
                q,
                index,
                root,
                weight,
                is_rightmost: index == 0,
                model_hash: hash.clone(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            });
        }
    }
    let text = match format {
        OutFormat::Json => {
            let mut t = serde_json::to_string_pretty(&rows).expect("rows are plain data");
            t.push('\n');
            t
        }
        OutFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["q", "index", "root", "weight", "is_rightmost", "model_hash", "version"])
                .expect("in-memory write");
            for row in &rows {
                wtr.write_record([
                    row.q.to_string(),
                    row.index.to_string(),
                    row.root.to_string(),
                    row.weight.to_string(),
                    row.is_rightmost.to_string(),
                    row.model_hash.clone(),
                    row.version.clone(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
        }
    };
    write_output(&text, out)?;
    Ok(rows)
}

/// The built-in reference model (used by tests and as a documented example):
/// drift 1.5, no Brownian part, unit-rate unit-mean exponential jumps,
/// refraction 0.25 at threshold 1.
pub fn reference_spec() -> ModelSpecFile {
    ModelSpecFile {
        process: ProcessBlock {
            drift: 1.5,
            sigma: 0.0,
            jump_rate: 1.0,
            jump_terms: vec![(1.0, 1.0)],
        },
        refraction: RefractionBlock { alpha: 0.25, threshold: 1.0 },
        defaults: DefaultsBlock::default(),
    }
}
